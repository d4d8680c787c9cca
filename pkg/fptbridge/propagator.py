import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.interpolate import CubicSpline

from fptbridge.boundary import MovingBoundary
from fptbridge.clock import VolatilityClock
from fptbridge.gauge import ANCHORS, GaugeFunctions, solve_gauge
from fptbridge.numerics import evolve_reference_pde, gauss_legendre_nodes
from fptbridge.utils import (
    WARNING_TAGS,
    ConfigError,
    ConvergenceError,
    DomainError,
    ShiftedDomainWarning,
)

METHODS = ("auto", "gauge", "pde")
NEGLIGIBLE_POTENTIAL = 1e-8
DELTA_TOLERANCE = 1e-3
CLAMP_TOLERANCE = 1e-9
_LOG_2PI = np.log(2 * np.pi)
TAG_WARNINGS = {tag: category for category, tag in WARNING_TAGS.items()}

logging.basicConfig(level=logging.INFO)


@dataclass(frozen=True)
class PropagatorConfig:
    """Numerical settings of the bridge expectation.

    Attributes:
        delta_frac (float): terminal offset, the gauge assembly is evaluated at
            tau = s - delta_frac (s - t)
        richardson (bool): extrapolate the gauge assembly from delta_frac and delta_frac / 2
        b_max_sigmas (float): integration cutoff in standard deviations of the conditioned kernel
        n_nodes (int): Gauss-Legendre nodes of the b integral
        method (str): "gauge", "pde" or "auto" (gauge for negligible potentials, pde otherwise)
        anchor (str): anchoring of pi and v inside the assembly, "initial" or "terminal".
            Defaults to "initial", unlike solve_gauge: with terminal anchors the shifted start
            a + v(t) can reach 0 (beta' = 2, a = 1, s = 1) and the image kernel then vanishes
            identically
        pde_terminal_frac (float): clock variance of the terminal sliver of the PDE route,
            as a fraction of H(s) - H(t)
        pde_points_per_width (int): grid points per terminal kernel width
        pde_time_steps (int): graded Crank-Nicolson steps of the first PDE level
        pde_potential_step (float): largest potential exponent |Delta beta| * L of a PDE step at
            the first level, L being the extent of the state grid
        pde_max_time_steps (int): graded steps beyond which the PDE refinement gives up
        pde_max_nodes (int): largest spatial grid of the PDE route

    Raises:
        ConfigError: if a setting is out of range

    """

    delta_frac: float = 1e-4
    richardson: bool = True
    b_max_sigmas: float = 12.0
    n_nodes: int = 96
    method: str = "auto"
    anchor: str = "initial"
    pde_terminal_frac: float = 4e-3
    pde_points_per_width: int = 8
    pde_time_steps: int = 400
    pde_potential_step: float = 0.5
    pde_max_time_steps: int = 51200
    pde_max_nodes: int = 6000

    def __post_init__(self):
        if not 0 < self.delta_frac < 0.1:
            raise ConfigError(f"delta_frac must lie in (0, 0.1), got {self.delta_frac}")
        if not self.b_max_sigmas >= 8:
            raise ConfigError(f"b_max_sigmas must be at least 8, got {self.b_max_sigmas}")
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method {self.method}, choose from {METHODS}")
        if self.anchor not in ANCHORS:
            raise ConfigError(f"Unknown anchor {self.anchor}, choose from {ANCHORS}")
        if not 0 < self.pde_terminal_frac < 0.1:
            raise ConfigError(
                f"pde_terminal_frac must lie in (0, 0.1), got {self.pde_terminal_frac}"
            )
        for key in ("n_nodes", "pde_points_per_width", "pde_time_steps", "pde_max_nodes"):
            if int(getattr(self, key)) < 4:
                raise ConfigError(f"{key} must be an integer of at least 4")
        if not self.pde_potential_step > 0:
            raise ConfigError(
                f"pde_potential_step must be positive, got {self.pde_potential_step}"
            )
        if not int(self.pde_max_time_steps) >= 2 * int(self.pde_time_steps):
            raise ConfigError("pde_max_time_steps must be at least twice pde_time_steps")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExpectationResult:
    """A bridge expectation with the diagnostics of its evaluation.

    Attributes:
        value (float): the expectation
        method (str): "gauge" or "pde", the route actually used
        tags (list): warning tags, see fptbridge.utils.WARNING_TAGS
        diagnostics (dict): intermediate values of the evaluation

    """

    value: float
    method: str
    tags: List[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def emit_warnings(self):
        for tag in self.tags:
            warnings.warn(f"Bridge expectation: {tag} ({self.diagnostics})", TAG_WARNINGS[tag])


def _kernel_terms(gauge: GaugeFunctions, clock: VolatilityClock, t, a, tau, b, image=True):
    """Log of the gauge factor times the direct Gaussian, the image factor, and whether the
    shifted coordinates left the positive half-line."""
    b = np.asarray(b, dtype=float)
    variance = np.asarray(clock.variance_between(t, tau), dtype=float)
    if not np.all(variance > 0):
        raise DomainError(f"The kernel needs H(tau) > H(t), got t={t}, tau={tau}")
    y = a + gauge.v(t)
    z = b + gauge.v_tilde(tau)
    log_direct = (
        b * gauge.pi_tilde(tau)
        + a * gauge.pi(t)
        + gauge.action(t, tau)
        - 0.5 * (_LOG_2PI + np.log(variance))
        - (z - y) ** 2 / (2 * variance)
    )
    factor = -np.expm1(-2 * y * z / variance) if image else np.ones_like(z)
    shifted = bool(np.any(y <= 0) or np.any(z <= 0))
    return log_direct, factor, shifted


def schrodinger_kernel(
    gauge: GaugeFunctions,
    clock: VolatilityClock,
    t: Union[float, np.ndarray],
    a: Union[float, np.ndarray],
    tau: Union[float, np.ndarray],
    b: Union[float, np.ndarray],
    image: bool = True,
) -> Union[float, np.ndarray]:
    """Green's function of -u_t = 1/2 h^2 u_aa - beta'(t) a u assembled from the gauge:

        exp(b pi_tilde(tau) + a pi(t) + S(t, tau)) K(t, y; tau, z)

    at the shifted coordinates y = a + v(t), z = b + v_tilde(tau), with K the image kernel
    there (the direct Gaussian alone when ``image=False``). For beta' = 0 this is exactly the
    image kernel. With the gauge anchored at t the direct term is the full-line Feynman-Kac
    kernel of the linear potential.

    Caution:
        The image term absorbs at z = 0, which is b = -v_tilde(tau) rather than b = 0. A
        ShiftedDomainWarning is emitted when y <= 0 or z <= 0; the kernel is still evaluated.

    Args:
        gauge (GaugeFunctions): gauge solved on an interval containing [t, tau]
        clock (VolatilityClock): the clock
        t (float or array): backward time
        a (float or array): backward state, positive
        tau (float or array): forward time, tau > t
        b (float or array): forward state, positive
        image (bool, optional (default=True)): include the image term

    """
    if np.any(np.asarray(tau) <= np.asarray(t)):
        raise DomainError(f"schrodinger_kernel needs tau > t, got t={t}, tau={tau}")
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise DomainError(f"schrodinger_kernel needs a, b > 0, got a={a}, b={b}")
    log_direct, factor, shifted = _kernel_terms(gauge, clock, t, a, tau, b, image)
    if shifted:
        warnings.warn(
            f"Shifted coordinates left the positive half-line at t={t}, tau={tau}",
            ShiftedDomainWarning,
        )
    value = np.exp(log_direct) * factor
    return value if np.ndim(value) else float(value)


def potential_is_negligible(
    boundary: MovingBoundary, clock: VolatilityClock, t: float, a: float, s: float
) -> bool:
    """Whether sup|beta'| (s - t) (a + sqrt(H(s) - H(t))) is below 1e-8, in which case the
    gauge assembly is exact to working precision."""
    scale = a + np.sqrt(float(clock.variance_between(t, s)))
    return boundary.beta_prime_bound(t, s) * (s - t) * scale <= NEGLIGIBLE_POTENTIAL


def _gauge_estimate(gauge, clock, t, a, s, delta_frac, cfg):
    """Bridge-ratio weighted integral of the gauge kernel at tau = s - delta_frac (s - t)."""
    tau = s - delta_frac * (s - t)
    h_s = float(clock.cumulative_variance(s))
    e_t = h_s - float(clock.cumulative_variance(t))
    e_tau = h_s - float(clock.cumulative_variance(tau))
    variance = e_t - e_tau
    # the conditioned kernel is centred at a e_tau/e_t with variance v e_tau/e_t
    centre = a * e_tau / e_t + max(-float(gauge.v_tilde(tau)), 0.0)
    width = np.sqrt(variance * e_tau / e_t)
    nodes, weights = gauss_legendre_nodes(0.0, centre + cfg.b_max_sigmas * width, cfg.n_nodes)
    log_ratio = (
        np.log(nodes / a) + 1.5 * np.log(e_t / e_tau) - nodes**2 / (2 * e_tau) + a**2 / (2 * e_t)
    )
    log_direct, factor, shifted = _kernel_terms(gauge, clock, t, a, tau, nodes)
    value = float(np.sum(weights * np.exp(log_ratio + log_direct) * factor))
    return value, tau, shifted


def gauge_expectation(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    t: float,
    a: float,
    s: float,
    cfg: PropagatorConfig,
) -> ExpectationResult:
    """Gauge assembly of the bridge expectation, the limit tau -> s of

        int_0^inf passage(tau, b; s, 0) / passage(t, a; s, 0) G(t, a; tau, b) db

    evaluated at delta_frac and delta_frac / 2 (Gauss-Legendre in b), optionally Richardson
    extrapolated.

    Raises:
        ConvergenceError: if the two offsets disagree by more than 1e-3 relative or the value
            is not positive

    """
    gauge = solve_gauge(boundary, clock, t, s, anchor=cfg.anchor)
    coarse, tau_coarse, shifted_coarse = _gauge_estimate(gauge, clock, t, a, s, cfg.delta_frac, cfg)
    fine, tau_fine, shifted_fine = _gauge_estimate(
        gauge, clock, t, a, s, 0.5 * cfg.delta_frac, cfg
    )
    diagnostics = {
        "method": "gauge",
        "t": t,
        "a": a,
        "s": s,
        "tau": [tau_coarse, tau_fine],
        "estimates": [coarse, fine],
        "anchor": cfg.anchor,
    }
    if not (np.isfinite(coarse) and np.isfinite(fine)) or fine <= 0 or coarse <= 0:
        raise ConvergenceError(
            f"Gauge assembly returned non-positive values {coarse}, {fine} at s={s}", diagnostics
        )
    change = abs(fine - coarse) / abs(fine)
    diagnostics["relative_change"] = change
    if change > DELTA_TOLERANCE:
        raise ConvergenceError(
            f"Gauge assembly changes by {change:.3g} relative when halving delta_frac at s={s}",
            diagnostics,
        )
    value = 2 * fine - coarse if cfg.richardson else coarse
    tags = ["shifted_domain"] if shifted_coarse or shifted_fine else []
    return ExpectationResult(value, "gauge", tags, diagnostics)


def _pde_levels(boundary, clock, t, a, s, cfg):
    """Grid, terminal profiles and a solver of w_V(t, a) / w_0(t, a) at a refinement level."""
    total = float(clock.variance_between(t, s))
    sliver = cfg.pde_terminal_frac * total
    h_s = float(clock.cumulative_variance(s))
    tau_e = float(clock.inverse_clock(h_s - sliver))
    length = a + 10 * np.sqrt(total)
    n_points = int(np.ceil(length / (np.sqrt(sliver) / cfg.pde_points_per_width))) + 1
    n_points = min(n_points, int(cfg.pde_max_nodes))
    grid = np.linspace(0.0, length, n_points)

    terminal = grid * sliver**-1.5 * np.exp(-(grid**2) / (2 * sliver))
    weighted = terminal * np.exp(-float(boundary.beta_prime(tau_e)) * grid * (s - tau_e) / 2)
    index = int(np.clip(np.searchsorted(grid, a), 4, len(grid) - 4))
    local = slice(index - 4, index + 4)

    def solve(n_steps, potential_step):
        kwargs = dict(
            t0=t,
            t1=tau_e,
            grid=grid,
            direction="backward",
            n_steps=n_steps,
            grading=sliver,
            potential_step=potential_step,
        )
        w_potential = evolve_reference_pde(clock, boundary, weighted, potential=True, **kwargs)
        w_free = evolve_reference_pde(clock, boundary, terminal, potential=False, **kwargs)
        numerator = float(CubicSpline(grid[local], w_potential[local])(a))
        denominator = float(CubicSpline(grid[local], w_free[local])(a))
        return numerator, denominator

    return tau_e, grid, solve


def pde_expectation(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    t: float,
    a: float,
    s: float,
    cfg: PropagatorConfig,
) -> ExpectationResult:
    """Bridge expectation as a ratio of two backward Feynman-Kac solutions.

    w solves -w_u = 1/2 h^2 w_xx - beta'(u) x w, killed at x = 0, from the terminal sliver
    tau_e (H(s) - H(tau_e) = e) back to t. The terminal data is the passage-kernel profile
    x e^(-3/2) exp(-x^2 / (2 e)), times exp(-beta'(tau_e) x (s - tau_e) / 2) for the potential
    left on the sliver. The expectation is w_V(t, a) / w_0(t, a), w_0 being the same
    evolution without potential.

    The time stepping starts from ``cfg.pde_time_steps`` graded steps and a potential exponent
    of at most ``cfg.pde_potential_step`` per step. The step count is doubled and the cap halved
    until two consecutive ratios agree to DELTA_TOLERANCE.

    Raises:
        ConvergenceError: if the unweighted solution does not resolve the level a, or the
            ratio has not settled within ``cfg.pde_max_time_steps`` steps

    """
    tau_e, grid, solve = _pde_levels(boundary, clock, t, a, s, cfg)
    diagnostics = {
        "method": "pde",
        "t": t,
        "a": a,
        "s": s,
        "tau_e": tau_e,
        "grid_points": len(grid),
        "dx": float(grid[1] - grid[0]),
    }
    n_steps, potential_step = int(cfg.pde_time_steps), float(cfg.pde_potential_step)
    ratios, changes = [], []
    while True:
        numerator, denominator = solve(n_steps, potential_step)
        diagnostics.update(weighted=numerator, unweighted=denominator, time_steps=n_steps)
        if not denominator > 0 or not 0 < numerator < np.inf:
            raise ConvergenceError(f"The PDE route does not resolve the level a={a}", diagnostics)
        ratios.append(numerator / denominator)
        if len(ratios) > 1:
            changes.append(abs(ratios[-1] - ratios[-2]) / abs(ratios[-1]))
            diagnostics["relative_change"] = changes[-1]
            if changes[-1] <= DELTA_TOLERANCE:
                break
        if 2 * n_steps > cfg.pde_max_time_steps:
            diagnostics["ratios"] = ratios
            raise ConvergenceError(
                f"The PDE route did not settle within {n_steps} time steps, "
                f"relative changes {changes}",
                diagnostics,
            )
        n_steps, potential_step = 2 * n_steps, potential_step / 2
    logging.debug(f"PDE route settled at {n_steps} steps, relative change {changes[-1]:.2g}")
    return ExpectationResult(ratios[-1], "pde", [], diagnostics)


def evaluate_bridge_expectation(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    t: float,
    a: float,
    s: float,
    cfg: Optional[PropagatorConfig] = None,
    method: Optional[str] = None,
) -> ExpectationResult:
    """Bridge expectation with its diagnostics, without emitting warnings.

    Args:
        method (str, optional (default=None)): overrides ``cfg.method``

    """
    cfg = PropagatorConfig() if cfg is None else cfg
    method = cfg.method if method is None else method
    if method not in METHODS:
        raise ConfigError(f"Unknown method {method}, choose from {METHODS}")
    if not 0 <= t < s:
        raise DomainError(f"The bridge expectation needs 0 <= t < s, got t={t}, s={s}")
    if not a > 0:
        raise DomainError(f"The bridge expectation needs a > 0, got {a}")
    if method == "auto":
        method = "gauge" if potential_is_negligible(boundary, clock, t, a, s) else "pde"
        logging.debug(f"Bridge expectation at t={t}, s={s} by the {method} route")
    if method == "gauge":
        result = gauge_expectation(boundary, clock, t, a, s, cfg)
    else:
        result = pde_expectation(boundary, clock, t, a, s, cfg)

    hypothesis = boundary.hypothesis_holds(t, s)
    if not hypothesis:
        result.tags.append("beta_prime_negative")
    if result.value > 1 and hypothesis:
        if result.value > 1 + CLAMP_TOLERANCE:
            result.tags.append("clamped")
            result.diagnostics["unclamped"] = result.value
        result.value = 1.0
    return result


def bridge_expectation(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    t: float,
    a: float,
    s: float,
    cfg: Optional[PropagatorConfig] = None,
) -> float:
    """E[exp(-int_t^s beta'(u) Y_u du)] under the bridge law started at (t, a) and ending at
    (s, 0).

    Caution:
        Negative beta' values are tagged with a HypothesisViolatedWarning. Values above one are
        clamped with a ClampedExpectationWarning when beta' >= 0; with negative beta' they are
        legitimate and returned unchanged.

    Args:
        boundary (MovingBoundary): the boundary providing beta'
        clock (VolatilityClock): the clock
        t (float): start time
        a (float): start level, positive
        s (float): terminal time
        cfg (PropagatorConfig, optional (default=None)): numerical settings

    Returns:
        float: the expectation

    Raises:
        ConvergenceError: if the evaluation does not settle

    """
    result = evaluate_bridge_expectation(boundary, clock, t, a, s, cfg)
    result.emit_warnings()
    return result.value
