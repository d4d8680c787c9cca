from unittest import TestCase

import numpy as np
from scipy import stats

from fptbridge.bridge_kernel import BridgeLaw, absorbed_kernel_at, free_kernel, image_kernel
from fptbridge.clock import VolatilityClock
from fptbridge.numerics import integrate_adaptive
from fptbridge.utils import DegenerateIntervalWarning, DomainError


class TestKernels(TestCase):
    """Test of the free and absorbed kernels."""

    def setUp(self):
        self.clock = VolatilityClock.constant()

    def test_free_kernel(self):
        """The free kernel is the Gaussian of the clock variance."""
        clock = VolatilityClock.exponential(1.0)
        variance = (np.exp(2.0) - 1.0) / 2.0
        expected = np.exp(-1.0 / (2 * variance)) / np.sqrt(2 * np.pi * variance)
        self.assertAlmostEqual(free_kernel(clock, 0.0, 0.0, 1.0, 1.0), expected, 14)
        self.assertAlmostEqual(free_kernel(clock, 0.0, 0.0, 1.0, 1.0), 0.1908, delta=1e-3)
        with self.assertRaises(DomainError):
            free_kernel(self.clock, 1.0, 0.0, 1.0, 0.0)

    def test_image_kernel(self):
        """Test of the image_kernel function."""
        self.assertAlmostEqual(image_kernel(self.clock, 0.0, 1.0, 1.0, 1.0), 0.3449719, 7)
        self.assertEqual(image_kernel(self.clock, 0.0, 1.0, 1.0, 0.0), 0.0)
        ys = np.linspace(0.0, 4.0, 9)
        np.testing.assert_allclose(
            image_kernel(self.clock, 0.0, 1.0, 1.0, ys),
            stats.norm.pdf(ys - 1.0) - stats.norm.pdf(ys + 1.0),
            rtol=1e-12,
            atol=1e-16,
        )
        with self.assertRaises(DomainError):
            image_kernel(self.clock, 0.0, 1.0, 1.0, -0.5)

    def test_absorbed_kernel_at(self):
        """Test of the absorbed_kernel_at function."""
        value = absorbed_kernel_at(self.clock, 0.0, 0.0, 2.0, 1.0, 1.0)
        self.assertAlmostEqual(value, stats.norm.pdf(1.0) - stats.norm.pdf(3.0), 14)
        shifted = absorbed_kernel_at(self.clock, 1.0, 0.0, 3.0, 1.0, 2.0)
        self.assertAlmostEqual(shifted, value, 14)
        below = absorbed_kernel_at(self.clock, 1.0, 0.0, -1.0, 1.0, 0.0)
        self.assertAlmostEqual(below, value, 14)
        with self.assertRaises(DomainError):
            absorbed_kernel_at(self.clock, 1.0, 0.0, 2.0, 1.0, 0.5)

    def test_degenerate_interval(self):
        """Kernels on intervals without clock variance vanish off the diagonal."""
        with self.assertWarns(DegenerateIntervalWarning):
            value = free_kernel(self.clock, 0.5, 1.0, 0.5 + 1e-15, 2.0)
        self.assertEqual(value, 0.0)


class TestBridgeLaw(TestCase):
    """Test of the BridgeLaw class."""

    def setUp(self):
        self.laws = [
            BridgeLaw(VolatilityClock.constant(), 1.0, 1.0),
            BridgeLaw(VolatilityClock.exponential(1.0), 1.0, 1.0),
        ]

    def test_equivalent_forms(self):
        """The log-space, kernel-ratio and Bessel forms of the transition agree."""
        ys = np.linspace(0.05, 3.0, 12)
        for law in self.laws:
            direct = law.bridge_transition(0.2, 0.8, 0.6, ys)
            np.testing.assert_allclose(
                direct, law.bridge_transition_by_ratio(0.2, 0.8, 0.6, ys), rtol=1e-10
            )
            np.testing.assert_allclose(
                direct, law.bessel_transition(0.2, 0.8, 0.6, ys), rtol=1e-10
            )

    def test_normalization(self):
        """The transition density integrates to one."""
        for law in self.laws:
            self.assertAlmostEqual(law.normalization(0.0, 1.0, 0.5), 1.0, delta=1e-8)
            self.assertAlmostEqual(law.normalization(0.3, 0.2, 0.9), 1.0, delta=1e-8)

    def test_chapman_kolmogorov(self):
        """Composition over an intermediate time reproduces the transition."""
        for law in self.laws:
            for y in (0.2, 0.6):
                composed = integrate_adaptive(
                    lambda z: law.bridge_transition(0.0, 1.0, 0.3, z)
                    * law.bridge_transition(0.3, z, 0.6, y),
                    0.0,
                    12.0,
                    tol=1e-12,
                )
                self.assertAlmostEqual(composed, law.bridge_transition(0.0, 1.0, 0.6, y), 6)

    def test_marginal_cdf(self):
        """The closed-form distribution is the integral of the transition."""
        law = self.laws[0]
        integral = integrate_adaptive(
            lambda y: law.bridge_transition(0.0, 1.0, 0.5, y), 0.0, 0.7, tol=1e-12
        )
        self.assertAlmostEqual(law.marginal_cdf(0.0, 1.0, 0.5, 0.7), integral, 10)
        self.assertAlmostEqual(law.marginal_cdf(0.0, 1.0, 0.5, 0.0), 0.0, 14)
        self.assertAlmostEqual(law.marginal_cdf(0.0, 1.0, 0.5, 20.0), 1.0, 12)

    def test_bridge_moment(self):
        """The mean of the bridge is the mean of the norm of a shifted 3-d Gaussian."""
        law = self.laws[0]
        mean = law.bridge_moment(0.0, 1.0, 0.5)
        m, sigma = 0.5, 0.5
        # mean of the noncentral chi distribution with three degrees of freedom
        expected = sigma * np.sqrt(2 / np.pi) * np.exp(-(m**2) / (2 * sigma**2)) + (
            m + sigma**2 / m
        ) * (1 - 2 * stats.norm.sf(m / sigma))
        self.assertAlmostEqual(mean, expected, 9)

    def test_invalid(self):
        """Test of the argument checks."""
        law = self.laws[0]
        with self.assertRaises(DomainError):
            law.bridge_transition(0.0, 1.0, 1.0, 0.5)
        with self.assertRaises(DomainError):
            law.bridge_transition(0.5, 1.0, 0.4, 0.5)
        with self.assertRaises(DomainError):
            law.bridge_transition(0.0, -1.0, 0.5, 0.5)
        with self.assertRaises(DomainError):
            BridgeLaw(VolatilityClock.constant(), 0.0, 1.0)
        with self.assertRaises(DomainError):
            BridgeLaw(VolatilityClock.constant(), 1.0, 0.0)
        self.assertEqual(law.bridge_transition(0.0, 1.0, 0.5, 0.0), 0.0)
