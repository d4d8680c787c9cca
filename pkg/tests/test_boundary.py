from unittest import TestCase

import numpy as np

from fptbridge.boundary import MovingBoundary, ou_to_martingale
from fptbridge.clock import VolatilityClock
from fptbridge.utils import DomainError, SingularClockError, UnsupportedStartError


class TestMovingBoundary(TestCase):
    """Test of the MovingBoundary class."""

    def setUp(self):
        self.clock = VolatilityClock.constant()
        self.parabola = MovingBoundary.quadratic(1.0, 0.0, 1.0, self.clock)

    def test_derivatives(self):
        """Test of f, f', f'', beta and beta' of a polynomial boundary."""
        self.assertAlmostEqual(self.parabola.f(0.5), 1.25, 14)
        self.assertAlmostEqual(self.parabola.fprime(0.5), 1.0, 14)
        self.assertAlmostEqual(self.parabola.fsecond(0.5), 2.0, 14)
        self.assertAlmostEqual(self.parabola.beta(0.5), 1.0, 14)
        self.assertAlmostEqual(self.parabola.beta_prime(0.5), 2.0, 14)
        self.assertAlmostEqual(self.parabola.b_beta(0.5), 1.0, 14)
        self.assertEqual(self.parabola.a, 1.0)
        values = self.parabola.beta_prime(np.linspace(0.0, 1.0, 5))
        np.testing.assert_allclose(values, 2.0, rtol=1e-14)

    def test_finite_differences(self):
        """Finite-difference derivatives agree with the analytic ones."""
        approx = self.parabola.with_derivative_mode("finite_difference")
        self.assertEqual(approx.derivative_mode, "finite_difference")
        for u in (0.0, 0.5, 1.0):
            self.assertAlmostEqual(approx.fprime(u), 2 * u, delta=1e-8)
            self.assertAlmostEqual(approx.beta_prime(u), 2.0, delta=1e-6)
        consistency = self.parabola.derivative_consistency()
        self.assertLess(max(consistency.values()), 1e-6)

    def test_missing_derivatives(self):
        """Boundaries without derivatives fall back to finite differences."""
        boundary = MovingBoundary(lambda t: 1.0 + np.sin(t), self.clock)
        self.assertEqual(boundary.derivative_mode, "finite_difference")
        self.assertAlmostEqual(boundary.fprime(0.7), np.cos(0.7), delta=1e-8)
        self.assertAlmostEqual(boundary.fsecond(0.7), -np.sin(0.7), delta=1e-5)

    def test_reflection(self):
        """Boundaries starting below zero are reflected."""
        boundary = MovingBoundary.linear(-1.0, -0.5, self.clock)
        self.assertTrue(boundary.negated)
        self.assertEqual(boundary.a, 1.0)
        self.assertAlmostEqual(boundary.f(1.0), 1.5, 14)
        self.assertAlmostEqual(boundary.beta(1.0), 0.5, 14)
        with self.assertRaises(UnsupportedStartError):
            MovingBoundary.linear(0.0, 1.0, self.clock)

    def test_linear_in_variance(self):
        """f = a + c H has constant beta on any clock."""
        clock = VolatilityClock.exponential(-0.5)
        boundary = MovingBoundary.linear_in_variance(1.0, 0.5, clock)
        u = np.linspace(0.0, 3.0, 7)
        np.testing.assert_allclose(boundary.beta(u), 0.5, rtol=1e-12)
        np.testing.assert_allclose(boundary.beta_prime(u), 0.0, atol=1e-12)
        self.assertTrue(boundary.hypothesis_holds())

    def test_singular_clock(self):
        """beta needs a positive volatility."""
        clock = VolatilityClock.custom(lambda u: u)
        boundary = MovingBoundary.linear(1.0, 1.0, clock)
        with self.assertRaises(SingularClockError):
            boundary.beta(0.0)
        with self.assertRaises(DomainError):
            boundary.beta(-1.0)

    def test_smoothness_checks(self):
        """Test of the smoothness_checks method."""
        checks = self.parabola.smoothness_checks()
        self.assertTrue(all(checks.values()))
        self.assertEqual(
            set(checks),
            {"f_c2", "f_over_h_c2", "fprime_over_h_c2", "beta_c1", "beta_prime_nonnegative"},
        )

    def test_hypothesis(self):
        """Test of the hypothesis checks on beta'."""
        falling = MovingBoundary.quadratic(1.0, 0.0, -0.1, self.clock)
        self.assertFalse(falling.hypothesis_holds())
        self.assertAlmostEqual(falling.beta_prime_min(), -0.2, 12)
        self.assertAlmostEqual(self.parabola.beta_prime_bound(0.0, 1.0), 2.0, 12)

    def test_to_dict(self):
        """Test of the to_dict method."""
        result = self.parabola.to_dict()
        self.assertEqual(result["kind"], "quadratic")
        self.assertEqual(result["coefficients"], [1.0, 0.0, 1.0])
        with self.assertRaises(DomainError):
            MovingBoundary.polynomial([1.0], self.clock, derivative_mode="spline")


class TestOuToMartingale(TestCase):
    """Test of the ou_to_martingale function."""

    def test_constant_level(self):
        """A constant OU level maps onto f = g exp(t) on the clock h = exp(t)."""
        clock, boundary = ou_to_martingale([2.0], horizon=3.0)
        self.assertEqual(clock.kind, "exponential")
        self.assertEqual(clock.horizon, 3.0)
        self.assertEqual(boundary.kind, "ou")
        self.assertAlmostEqual(boundary.f(1.0), 2 * np.e, 12)
        self.assertAlmostEqual(clock.h2(1.0), np.e**2, 12)
        self.assertAlmostEqual(boundary.beta(1.0), 2 * np.exp(-1.0), 12)
        self.assertAlmostEqual(boundary.beta_prime(1.0), -2 * np.exp(-1.0), 12)
        self.assertFalse(boundary.hypothesis_holds())
        self.assertEqual(boundary.to_dict()["ou_rate"], 1.0)

    def test_callable(self):
        """Callable OU boundaries agree with their coefficients."""
        _, from_list = ou_to_martingale([1.0, 0.5], horizon=2.0)
        _, from_callable = ou_to_martingale(lambda t: 1.0 + 0.5 * t, horizon=2.0)
        self.assertEqual(from_callable.derivative_mode, "finite_difference")
        for u in (0.3, 1.2):
            self.assertAlmostEqual(from_list.f(u), from_callable.f(u), 12)
            self.assertAlmostEqual(from_list.beta(u), from_callable.beta(u), delta=1e-8)

    def test_invalid_start(self):
        """The OU boundary must start above 0."""
        with self.assertRaises(UnsupportedStartError):
            ou_to_martingale([-1.0], horizon=1.0)
