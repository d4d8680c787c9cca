import warnings
from unittest import TestCase

import numpy as np

from fptbridge.bridge_kernel import image_kernel
from fptbridge.boundary import MovingBoundary, ou_to_martingale
from fptbridge.clock import VolatilityClock
from fptbridge.gauge import solve_gauge
from fptbridge.numerics import evolve_reference_pde
from fptbridge.propagator import (
    PropagatorConfig,
    bridge_expectation,
    evaluate_bridge_expectation,
    potential_is_negligible,
    schrodinger_kernel,
)
from fptbridge.simulators import mc_bridge_expectation
from fptbridge.utils import (
    ConfigError,
    ConvergenceError,
    DomainError,
    HypothesisViolatedWarning,
    ShiftedDomainWarning,
)


class TestPropagatorConfig(TestCase):
    """Test of the PropagatorConfig class."""

    def test_validation(self):
        """Test of the range checks."""
        self.assertEqual(PropagatorConfig().to_dict()["method"], "auto")
        with self.assertRaises(ConfigError):
            PropagatorConfig(delta_frac=0.5)
        with self.assertRaises(ConfigError):
            PropagatorConfig(method="mc")
        with self.assertRaises(ConfigError):
            PropagatorConfig(anchor="middle")
        with self.assertRaises(ConfigError):
            PropagatorConfig(b_max_sigmas=4.0)
        with self.assertRaises(ConfigError):
            PropagatorConfig(n_nodes=2)
        with self.assertRaises(ConfigError):
            PropagatorConfig(pde_potential_step=0.0)
        with self.assertRaises(ConfigError):
            PropagatorConfig(pde_time_steps=400, pde_max_time_steps=600)

    def test_anchor_default(self):
        """The assembly anchors at the initial time, where the shifted start stays at a."""
        self.assertEqual(PropagatorConfig().anchor, "initial")
        clock = VolatilityClock.constant()
        boundary = MovingBoundary.quadratic(1.0, 0.0, 1.0, clock)
        terminal = solve_gauge(boundary, clock, 0.0, 1.0, anchor="terminal")
        initial = solve_gauge(boundary, clock, 0.0, 1.0, anchor="initial")
        self.assertAlmostEqual(1.0 + terminal.v(0.0), 0.0, 8)
        self.assertAlmostEqual(1.0 + initial.v(0.0), 1.0, 12)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ShiftedDomainWarning)
            value = schrodinger_kernel(terminal, clock, 0.0, 1.0, 0.5, 1.0)
        self.assertAlmostEqual(value, 0.0, 6)
        self.assertGreater(schrodinger_kernel(initial, clock, 0.0, 1.0, 0.5, 1.0), 0.0)


class TestSchrodingerKernel(TestCase):
    """Test of the schrodinger_kernel function."""

    def setUp(self):
        self.clock = VolatilityClock.constant()

    def test_trivial_gauge(self):
        """Without potential the kernel is the image kernel."""
        boundary = MovingBoundary.linear(1.0, 1.0, self.clock)
        gauge = solve_gauge(boundary, self.clock, 0.0, 1.0)
        ys = np.linspace(0.1, 3.0, 10)
        np.testing.assert_allclose(
            schrodinger_kernel(gauge, self.clock, 0.2, 1.0, 0.7, ys),
            image_kernel(self.clock, 0.2, 1.0, 0.7, ys),
            rtol=1e-12,
        )
        direct = schrodinger_kernel(gauge, self.clock, 0.2, 1.0, 0.7, 1.5, image=False)
        self.assertGreater(direct, schrodinger_kernel(gauge, self.clock, 0.2, 1.0, 0.7, 1.5))

    def test_shifted_domain(self):
        """Shifted coordinates below zero are reported."""
        boundary = MovingBoundary.quadratic(1.0, 0.0, 1.0, self.clock)
        gauge = solve_gauge(boundary, self.clock, 0.0, 1.0)
        with self.assertWarns(ShiftedDomainWarning):
            schrodinger_kernel(gauge, self.clock, 0.0, 0.5, 0.5, 1.0)

    def test_against_reference_pde(self):
        """Far from the origin the direct kernel evolves under the Crank-Nicolson solver."""
        boundary = MovingBoundary.quadratic(1.0, 0.0, 1.0, self.clock)
        gauge = solve_gauge(boundary, self.clock, 0.0, 1.0, anchor="initial")
        grid = np.linspace(0.0, 12.0, 1201)

        def kernel(tau):
            values = np.zeros_like(grid)
            with warnings.catch_warnings():
                # the shifted coordinate is negative only near the origin, far from the mass
                warnings.simplefilter("ignore", ShiftedDomainWarning)
                values[1:] = schrodinger_kernel(
                    gauge, self.clock, 0.0, 4.0, tau, grid[1:], image=False
                )
            return values

        evolved = evolve_reference_pde(
            self.clock,
            boundary,
            kernel(0.1),
            0.1,
            0.5,
            grid,
            direction="forward",
            potential_step=0.01,
        )
        expected = kernel(0.5)
        self.assertLess(np.max(np.abs(evolved - expected)), 1e-3 * np.max(expected))

    def test_invalid(self):
        boundary = MovingBoundary.linear(1.0, 1.0, self.clock)
        gauge = solve_gauge(boundary, self.clock, 0.0, 1.0)
        with self.assertRaises(DomainError):
            schrodinger_kernel(gauge, self.clock, 0.5, 1.0, 0.5, 1.0)
        with self.assertRaises(DomainError):
            schrodinger_kernel(gauge, self.clock, 0.2, -1.0, 0.5, 1.0)


class TestBridgeExpectation(TestCase):
    """Test of the bridge expectation routes."""

    def setUp(self):
        self.clock = VolatilityClock.constant()
        self.linear = MovingBoundary.linear(1.0, 1.0, self.clock)
        self.parabola = MovingBoundary.quadratic(1.0, 0.0, 1.0, self.clock)

    def test_negligible_potential(self):
        """Test of the potential_is_negligible function."""
        self.assertTrue(potential_is_negligible(self.linear, self.clock, 0.0, 1.0, 1.0))
        self.assertFalse(potential_is_negligible(self.parabola, self.clock, 0.0, 1.0, 1.0))

    def test_trivial_potential(self):
        """The expectation is one when beta' = 0, on both routes."""
        for s in (0.25, 1.0, 2.0):
            result = evaluate_bridge_expectation(self.linear, self.clock, 0.0, 1.0, s)
            self.assertEqual(result.method, "gauge")
            self.assertAlmostEqual(result.value, 1.0, delta=1e-6)
            self.assertLessEqual(result.value, 1.0)
            self.assertNotIn("clamped", result.tags)
        result = evaluate_bridge_expectation(
            self.linear, self.clock, 0.2, 0.7, 1.0, method="pde"
        )
        self.assertEqual(result.method, "pde")
        self.assertAlmostEqual(result.value, 1.0, 12)
        clock = VolatilityClock.exponential(-0.5)
        boundary = MovingBoundary.linear_in_variance(1.0, 0.5, clock)
        self.assertAlmostEqual(bridge_expectation(boundary, clock, 0.0, 1.0, 1.5), 1.0, delta=1e-6)

    def test_quadratic_against_monte_carlo(self):
        """The PDE route agrees with exact bridge sampling for f = 1 + t^2."""
        s = 0.5
        result = evaluate_bridge_expectation(self.parabola, self.clock, 0.0, 1.0, s)
        self.assertEqual(result.method, "pde")
        self.assertTrue(0.0 < result.value < 1.0)
        estimate = mc_bridge_expectation(
            self.parabola, self.clock, 1.0, s, n_paths=100000, n_steps=200, seed=7
        )
        self.assertLess(estimate.stderr, 2e-3)
        self.assertAlmostEqual(result.value, estimate.mean, delta=3 * estimate.stderr)

    def test_curvature_ladder(self):
        """A pointwise larger beta' gives a smaller expectation."""
        values = []
        for c2 in (1.0, 4.0, 25.0):
            boundary = MovingBoundary.quadratic(1.0, 0.0, c2, self.clock)
            result = evaluate_bridge_expectation(boundary, self.clock, 0.0, 1.0, 1.0)
            self.assertEqual(result.method, "pde")
            values.append(result.value)
        self.assertTrue(0.0 < values[2] < values[1] < values[0] < 1.0)

    def test_time_refinement(self):
        """The PDE route refines its time steps until the ratio settles."""
        coarse = evaluate_bridge_expectation(
            self.parabola, self.clock, 0.0, 1.0, 0.5, PropagatorConfig(pde_time_steps=100)
        )
        default = evaluate_bridge_expectation(self.parabola, self.clock, 0.0, 1.0, 0.5)
        for result in (coarse, default):
            self.assertLessEqual(result.diagnostics["relative_change"], 1e-3)
        self.assertGreaterEqual(coarse.diagnostics["time_steps"], 200)
        self.assertAlmostEqual(coarse.value / default.value, 1.0, delta=2e-3)
        cfg = PropagatorConfig(pde_time_steps=4, pde_max_time_steps=8, pde_potential_step=50.0)
        with self.assertRaises(ConvergenceError) as context:
            evaluate_bridge_expectation(self.parabola, self.clock, 0.0, 1.0, 0.5, cfg)
        self.assertEqual(context.exception.diagnostics["time_steps"], 8)
        self.assertEqual(len(context.exception.diagnostics["ratios"]), 2)

    def test_ou_against_monte_carlo(self):
        """For the OU process and g = 2 the PDE route agrees with exact bridge sampling where
        the potential exponent grows large."""
        clock, boundary = ou_to_martingale([2.0], horizon=3.0)
        for s, seed in ((2.0, 5), (3.0, 6)):
            result = evaluate_bridge_expectation(boundary, clock, 0.0, boundary.a, s)
            self.assertEqual(result.method, "pde")
            self.assertIn("beta_prime_negative", result.tags)
            estimate = mc_bridge_expectation(
                boundary, clock, boundary.a, s, n_paths=100000, n_steps=300, seed=seed
            )
            self.assertAlmostEqual(result.value, estimate.mean, delta=3 * estimate.stderr)

    def test_negative_beta_prime(self):
        """Negative beta' is tagged and values above one are kept."""
        falling = MovingBoundary.quadratic(1.0, 0.0, -0.1, self.clock)
        with self.assertWarns(HypothesisViolatedWarning):
            value = bridge_expectation(falling, self.clock, 0.0, 1.0, 1.0)
        self.assertGreater(value, 1.0)

    def test_invalid(self):
        """Test of the argument checks."""
        with self.assertRaises(DomainError):
            evaluate_bridge_expectation(self.linear, self.clock, 1.0, 1.0, 0.5)
        with self.assertRaises(DomainError):
            evaluate_bridge_expectation(self.linear, self.clock, 0.0, 0.0, 0.5)
        with self.assertRaises(ConfigError):
            evaluate_bridge_expectation(self.linear, self.clock, 0.0, 1.0, 0.5, method="mc")

    def test_no_warnings_for_trivial_potential(self):
        """The trivial potential evaluates silently."""
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            bridge_expectation(self.linear, self.clock, 0.0, 1.0, 1.0)
