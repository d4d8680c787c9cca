from unittest import TestCase

import numpy as np

from fptbridge.clock import VolatilityClock
from fptbridge.examples import (
    SCENARIOS,
    bachelier_levy_cdf,
    bachelier_levy_density,
    build_scenario,
    level_cdf_closed_form,
    linear_in_variance_density,
)
from fptbridge.numerics import integrate_adaptive
from fptbridge.utils import DomainError


class TestScenarios(TestCase):
    """Test of the shipped scenarios and closed forms."""

    def test_build_scenario(self):
        """Test of the build_scenario function."""
        for name in SCENARIOS:
            clock, boundary = build_scenario(name)
            self.assertEqual(boundary.a, float(boundary.f(0.0)))
            self.assertIs(boundary.clock, clock)
        with self.assertRaises(DomainError):
            build_scenario("cubic")

    def test_closed_forms(self):
        """The closed forms are consistent with each other."""
        self.assertAlmostEqual(bachelier_levy_cdf(1.0, 0.0, 1.0), 0.3173105, 7)
        self.assertAlmostEqual(level_cdf_closed_form(1.0, 1.0), 0.3173105, 7)
        self.assertAlmostEqual(bachelier_levy_cdf(1.0, 1.0, 1.0), 0.0904178, 7)
        self.assertAlmostEqual(bachelier_levy_density(1.0, 1.0, 1.0), 0.0539910, 7)
        integral = integrate_adaptive(
            lambda s: float(bachelier_levy_density(1.0, 1.0, s)), 0.0, 1.0, tol=1e-12
        )
        self.assertAlmostEqual(integral, bachelier_levy_cdf(1.0, 1.0, 1.0), 10)
        unit = VolatilityClock.constant()
        s = np.array([0.3, 1.0, 2.0])
        np.testing.assert_allclose(
            linear_in_variance_density(unit, 1.0, 0.5, s),
            bachelier_levy_density(1.0, 0.5, s),
            rtol=1e-12,
        )
