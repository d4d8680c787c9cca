from unittest import TestCase

import numpy as np
from scipy import stats

from fptbridge.boundary import MovingBoundary, ou_to_martingale
from fptbridge.bridge_kernel import BridgeLaw
from fptbridge.clock import VolatilityClock
from fptbridge.examples import bachelier_levy_cdf
from fptbridge.level_hitting import LevelHittingLaw
from fptbridge.simulators import (
    FptSample,
    crossing_bias,
    ks_statistic,
    mc_bridge_expectation,
    simulate_bridge_euler,
    simulate_bridge_exact,
    simulate_martingale_fpt,
    simulate_ou_fpt,
)
from fptbridge.utils import DomainError

N_PATHS = 20000
KS_THRESHOLD = 0.02


class TestMartingaleSimulation(TestCase):
    """Test of the simulate_martingale_fpt function."""

    def setUp(self):
        self.clock = VolatilityClock.constant()
        self.constant = MovingBoundary.constant(1.0, self.clock)
        self.linear = MovingBoundary.linear(1.0, 1.0, self.clock)

    def test_constant_level(self):
        """Simulated passage times follow the reflection principle."""
        sample = simulate_martingale_fpt(self.constant, self.clock, N_PATHS, 500, 1.0, seed=1)
        self.assertEqual(sample.n_crossed + sample.n_censored, N_PATHS)
        self.assertTrue(np.all(np.diff(sample.times) >= 0))
        self.assertTrue(np.all((sample.times > 0) & (sample.times <= 1.0)))
        law = LevelHittingLaw(self.clock, 1.0)
        self.assertLess(ks_statistic(sample, law.level_cdf), KS_THRESHOLD)

    def test_linear_boundary(self):
        """Simulated passage times follow the Bachelier-Levy distribution."""
        sample = simulate_martingale_fpt(self.linear, self.clock, N_PATHS, 500, 2.0, seed=2)
        statistic = ks_statistic(sample, lambda t: bachelier_levy_cdf(1.0, 1.0, t))
        self.assertLess(statistic, KS_THRESHOLD)

    def test_threads(self):
        """Samples depend on the seed but not on the number of threads."""
        kwargs = dict(n_paths=10000, n_steps=50, horizon=1.0)
        single = simulate_martingale_fpt(self.constant, self.clock, seed=3, threads=1, **kwargs)
        many = simulate_martingale_fpt(self.constant, self.clock, seed=3, threads=3, **kwargs)
        np.testing.assert_array_equal(single.times, many.times)
        other = simulate_martingale_fpt(self.constant, self.clock, seed=4, **kwargs)
        self.assertFalse(np.array_equal(single.times, other.times))

    def test_crossing_bias(self):
        """The bridge correction recovers crossings missed between steps."""
        without, with_correction = crossing_bias(self.constant, self.clock, 10000, 100, 1.0, 5)
        self.assertLess(without, with_correction)
        self.assertAlmostEqual(with_correction, 0.3173105, delta=0.02)

    def test_invalid(self):
        with self.assertRaises(DomainError):
            simulate_martingale_fpt(self.constant, self.clock, 10, 1, 1.0, seed=0)
        with self.assertRaises(DomainError):
            simulate_martingale_fpt(self.constant, self.clock, 0, 10, 1.0, seed=0)
        with self.assertRaises(DomainError):
            simulate_martingale_fpt(self.constant, self.clock, 10, 10, 0.0, seed=0)


class TestOuSimulation(TestCase):
    """Test of the simulate_ou_fpt function."""

    def test_against_martingale(self):
        """Direct OU simulation agrees with the time-changed martingale problem."""
        euler = simulate_ou_fpt([1.0], N_PATHS, 0.01, 3.0, seed=6)
        exact = simulate_ou_fpt([1.0], N_PATHS, 0.01, 3.0, seed=6, scheme="exact")
        clock, boundary = ou_to_martingale([1.0], horizon=3.0)
        mapped = simulate_martingale_fpt(boundary, clock, N_PATHS, 300, 3.0, seed=6)
        self.assertAlmostEqual(euler.empirical_cdf(3.0), exact.empirical_cdf(3.0), delta=0.03)
        self.assertAlmostEqual(exact.empirical_cdf(3.0), mapped.empirical_cdf(3.0), delta=0.03)

    def test_invalid(self):
        with self.assertRaises(DomainError):
            simulate_ou_fpt([1.0], 10, 0.01, 1.0, seed=0, scheme="milstein")
        with self.assertRaises(DomainError):
            simulate_ou_fpt([-1.0], 10, 0.01, 1.0, seed=0)
        with self.assertRaises(DomainError):
            simulate_ou_fpt([1.0], 10, 0.0, 1.0, seed=0)


class TestBridgeSimulation(TestCase):
    """Test of the bridge samplers."""

    def test_exact_marginal(self):
        """The exact sampler at s/2 follows the closed-form bridge marginal."""
        for clock in (VolatilityClock.constant(), VolatilityClock.exponential(1.0)):
            ensemble = simulate_bridge_exact(clock, 1.0, 1.0, N_PATHS, 10, seed=8, threads=2)
            np.testing.assert_array_equal(ensemble.paths[:, 0], 1.0)
            np.testing.assert_array_equal(ensemble.paths[:, -1], 0.0)
            law = BridgeLaw(clock, 1.0, 1.0)
            statistic = stats.kstest(
                ensemble.marginal(0.5), lambda y: law.marginal_cdf(0.0, 1.0, 0.5, y)
            ).statistic
            self.assertLess(statistic, KS_THRESHOLD)
            with self.assertRaises(DomainError):
                ensemble.marginal(0.55)

    def test_euler_mean(self):
        """The Euler sampler reproduces the bridge mean at s/2."""
        clock = VolatilityClock.constant()
        ensemble = simulate_bridge_euler(clock, 1.0, 1.0, 10000, 400, seed=9)
        self.assertTrue(np.all(ensemble.paths[:, :-1] > 0))
        np.testing.assert_array_equal(ensemble.paths[:, -1], 0.0)
        mean = BridgeLaw(clock, 1.0, 1.0).bridge_moment(0.0, 1.0, 0.5)
        self.assertAlmostEqual(np.mean(ensemble.marginal(0.5)), mean, delta=0.03)

    def test_trivial_expectation(self):
        """Without potential every path contributes exactly one."""
        clock = VolatilityClock.constant()
        boundary = MovingBoundary.linear(1.0, 1.0, clock)
        estimate = mc_bridge_expectation(boundary, clock, 1.0, 1.0, 100, 20, seed=10)
        self.assertEqual(estimate.mean, 1.0)
        self.assertEqual(estimate.stderr, 0.0)
        self.assertEqual(estimate.to_dict()["sampler"], "exact")

    def test_invalid(self):
        clock = VolatilityClock.constant()
        with self.assertRaises(DomainError):
            simulate_bridge_exact(clock, 0.0, 1.0, 10, 10, seed=0)
        with self.assertRaises(DomainError):
            simulate_bridge_euler(clock, 1.0, 1.0, 10, 1, seed=0)


class TestKsStatistic(TestCase):
    """Test of the ks_statistic function and FptSample."""

    def test_censored_sample(self):
        """Censored paths keep the empirical distribution below one."""
        sample = FptSample(np.array([0.5]), 2, 1.0)
        self.assertEqual(sample.n_censored, 1)
        self.assertEqual(sample.empirical_cdf(0.7), 0.5)
        self.assertEqual(sample.empirical_cdf(0.2), 0.0)
        self.assertAlmostEqual(sample.binomial_stderr(0.7), 0.5 / np.sqrt(2), 14)
        self.assertAlmostEqual(ks_statistic(sample, lambda t: np.asarray(t)), 0.5, 14)
        self.assertAlmostEqual(ks_statistic(sample, lambda t: 0.5 * np.ones_like(t)), 0.5, 14)
