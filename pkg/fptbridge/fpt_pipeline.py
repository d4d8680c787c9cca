import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from fptbridge.boundary import MovingBoundary
from fptbridge.clock import VolatilityClock
from fptbridge.level_hitting import LevelHittingLaw
from fptbridge.numerics import gauss_legendre, gauss_legendre_nodes, integrate_adaptive
from fptbridge.propagator import (
    TAG_WARNINGS,
    PropagatorConfig,
    evaluate_bridge_expectation,
    potential_is_negligible,
)
from fptbridge.utils import ConvergenceError, DomainError

MAX_EXPONENT = 600.0
CDF_TAIL = 9.0
# nodes with r^2 - r_t^2 above CDF_NEGLIGIBLE carry a relative weight below 1.4e-11
CDF_NEGLIGIBLE = 25.0
CDF_PANELS = 3
CDF_NODES = 16
INCREMENT_NODES = 8
MASS_DEFICIT = 0.99


def _emit(tags: Sequence[str], where: str):
    for tag in dict.fromkeys(tags):
        warnings.warn(f"{where}: {tag}", TAG_WARNINGS[tag])


def girsanov_prefactor(boundary: MovingBoundary, clock: VolatilityClock, s: float) -> float:
    """exp(-beta(s) a + a int_0^s beta'(u) du - 1/2 int_0^s b(u) beta(u) du).

    The simplified form exp(-a beta(0) - 1/2 int_0^s b beta du) is evaluated as well and the
    exponents must agree to relative 1e-10 (1e-7 for finite-difference boundaries).

    Raises:
        DomainError: if s <= 0
        QuadratureError: if b beta is not integrable on [0, s]
        ConvergenceError: if the two forms disagree

    """
    if not s > 0:
        raise DomainError(f"girsanov_prefactor needs s > 0, got {s}")
    a = boundary.a
    quadratic = integrate_adaptive(lambda u: float(boundary.b_beta(u)), 0.0, s, tol=1e-12)
    drift = integrate_adaptive(lambda u: float(boundary.beta_prime(u)), 0.0, s, tol=1e-12)
    exponent = -boundary.beta(s) * a + a * drift - 0.5 * quadratic
    simplified = -a * boundary.beta(0.0) - 0.5 * quadratic
    tol = 1e-10 if boundary.derivative_mode == "analytic" else 1e-7
    if abs(exponent - simplified) > tol * max(1.0, abs(simplified)):
        raise ConvergenceError(
            f"Girsanov exponents disagree at s={s}: {exponent} vs {simplified}",
            {"s": s, "exponent": exponent, "simplified": simplified},
        )
    return float(np.exp(simplified))


def density_with_tags(
    boundary: MovingBoundary, clock: VolatilityClock, s: float, cfg: PropagatorConfig
) -> Tuple[float, List[str]]:
    """First passage density at s and the warning tags of its evaluation."""
    if not s > 0:
        raise DomainError(f"The first passage density needs s > 0, got {s}")
    a = boundary.a
    law = LevelHittingLaw(clock, a)
    variance = float(clock.cumulative_variance(s))
    if variance <= 0 or a * a / (2 * variance) > MAX_EXPONENT:
        return 0.0, []
    level = float(law.level_density(s))
    if level == 0:
        return 0.0, []
    expectation = evaluate_bridge_expectation(boundary, clock, 0.0, a, s, cfg)
    value = expectation.value * girsanov_prefactor(boundary, clock, s) * level
    return value, expectation.tags


def fpt_density(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    s: float,
    cfg: Optional[PropagatorConfig] = None,
) -> float:
    """Density of T = inf{t >= 0 | M_t = f(t)} at s, the product of the bridge expectation
    started at (0, a), the Girsanov prefactor and the level hitting density, a = f(0).

    Args:
        boundary (MovingBoundary): the boundary
        clock (VolatilityClock): the clock of the martingale
        s (float): time, positive
        cfg (PropagatorConfig, optional (default=None)): settings of the bridge expectation

    Returns:
        float: the density, zero where the level density underflows

    Raises:
        ConvergenceError: if the bridge expectation does not settle

    """
    cfg = PropagatorConfig() if cfg is None else cfg
    value, tags = density_with_tags(boundary, clock, s, cfg)
    _emit(tags, f"fpt_density at s={s}")
    return value


def cdf_with_tags(
    boundary: MovingBoundary, clock: VolatilityClock, t: float, cfg: PropagatorConfig
) -> Tuple[float, List[str]]:
    if t < 0:
        raise DomainError(f"fpt_cdf needs t >= 0, got {t}")
    if t > clock.horizon:
        raise DomainError(f"t={t} lies beyond the clock horizon {clock.horizon}")
    if t == 0:
        return 0.0, []
    a = boundary.a
    law = LevelHittingLaw(clock, a)
    r_t = float(law.r_of_time(t))
    if not np.isfinite(r_t) or r_t > np.sqrt(MAX_EXPONENT):
        return 0.0, []
    weight = 2 / np.sqrt(np.pi)
    tags: List[str] = []

    # r = a / sqrt(2 H(s)) turns phi_a(s) ds into 2/sqrt(pi) exp(-r^2) dr
    def integrand(r: float) -> float:
        s = float(law.time_of_r(r))
        if s <= 0 or r * r - r_t * r_t > CDF_NEGLIGIBLE:
            return 0.0
        expectation = evaluate_bridge_expectation(boundary, clock, 0.0, a, s, cfg)
        tags.extend(expectation.tags)
        prefactor = girsanov_prefactor(boundary, clock, s)
        return expectation.value * prefactor * weight * np.exp(-r * r)

    smooth = cfg.method == "gauge" or (
        cfg.method == "auto" and potential_is_negligible(boundary, clock, 0.0, a, t)
    )
    if smooth:
        value = integrate_adaptive(integrand, r_t, r_t + CDF_TAIL, tol=1e-10)
    else:
        value = gauss_legendre(
            np.vectorize(integrand, otypes=[float]),
            r_t,
            r_t + CDF_TAIL,
            n=CDF_NODES,
            panels=CDF_PANELS,
        )
    return float(value), tags


def fpt_cdf(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    t: float,
    cfg: Optional[PropagatorConfig] = None,
) -> float:
    """P(T <= t), the integral of fpt_density over (0, t].

    The integral is taken in r = a / sqrt(2 H(s)), which removes the essential singularity at
    s = 0. Adaptive quadrature is used when the bridge expectation is smooth in s (negligible
    potential or the gauge route); PDE values are smooth only to solver accuracy and are
    integrated with composite Gauss-Legendre.

    Raises:
        DomainError: if t < 0 or t exceeds the clock horizon

    """
    cfg = PropagatorConfig() if cfg is None else cfg
    value, tags = cdf_with_tags(boundary, clock, t, cfg)
    _emit(tags, f"fpt_cdf at t={t}")
    return value


@dataclass
class DensityCurve:
    """First passage density and distribution on a time grid.

    Attributes:
        grid (np.ndarray): increasing times
        density (np.ndarray): density values
        cdf (np.ndarray): distribution values
        total_mass (float): distribution at the last grid point
        warnings (list): de-duplicated warning tags of the whole curve
        point_tags (list): warning tags of every grid point

    """

    grid: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    total_mass: float
    warnings: List[str] = field(default_factory=list)
    point_tags: List[List[str]] = field(default_factory=list)

    def rows(self):
        """Rows (s, density, cdf, warnings) with the tags of a point joined by ';'."""
        for i, s in enumerate(self.grid):
            tags = self.point_tags[i] if self.point_tags else []
            yield float(s), float(self.density[i]), float(self.cdf[i]), ";".join(tags)

    def trapezoid_mismatch(self) -> float:
        """Largest gap between the cdf increments and the trapezoidal integral of the density."""
        trapezoid = np.concatenate(
            [[0.0], np.cumsum(0.5 * np.diff(self.grid) * (self.density[1:] + self.density[:-1]))]
        )
        return float(np.max(np.abs(self.cdf - self.cdf[0] - trapezoid)))


def density_curve(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    grid: Sequence[float],
    cfg: Optional[PropagatorConfig] = None,
    threads: int = 1,
    progress: bool = False,
) -> DensityCurve:
    """Evaluate the first passage density and distribution on ``grid``.

    Grid points are evaluated independently in a thread pool and collected by grid index.
    The distribution starts from fpt_cdf at the first point and accumulates 8-point
    Gauss-Legendre integrals of the density between neighbours.

    Args:
        boundary (MovingBoundary): the boundary
        clock (VolatilityClock): the clock
        grid (list): strictly increasing positive times
        cfg (PropagatorConfig, optional (default=None)): settings of the bridge expectation
        threads (int, optional (default=1)): worker threads
        progress (bool, optional (default=False)): show a progress bar

    Returns:
        DensityCurve: the curve, tagged with beta_prime_negative, shifted_domain, clamped and
            mass_deficit where they apply

    """
    cfg = PropagatorConfig() if cfg is None else cfg
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise DomainError("The grid must be a non-empty one-dimensional sequence")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise DomainError("The grid must be positive and strictly increasing")

    intervals = [gauss_legendre_nodes(lo, hi, INCREMENT_NODES) for lo, hi in zip(grid, grid[1:])]

    def point(s):
        return density_with_tags(boundary, clock, s, cfg)

    def increment(nodes_weights):
        nodes, weights = nodes_weights
        terms = [density_with_tags(boundary, clock, s, cfg) for s in nodes]
        value = float(np.sum(weights * np.array([v for v, _ in terms])))
        return value, [tag for _, tags in terms for tag in tags]

    with ThreadPoolExecutor(max_workers=max(int(threads), 1)) as executor:
        points = list(
            tqdm(executor.map(point, grid), total=len(grid), desc="density", disable=not progress)
        )
        steps = list(
            tqdm(
                executor.map(increment, intervals),
                total=len(intervals),
                desc="cdf",
                disable=not progress,
            )
        )
        start, start_tags = cdf_with_tags(boundary, clock, float(grid[0]), cfg)

    density = np.array([value for value, _ in points])
    cdf = start + np.concatenate([[0.0], np.cumsum([value for value, _ in steps])])
    point_tags = [list(dict.fromkeys(tags)) for _, tags in points]
    all_tags = start_tags + [t for tags in point_tags for t in tags]
    all_tags += [t for _, tags in steps for t in tags]
    total_mass = float(cdf[-1])
    if total_mass < MASS_DEFICIT:
        all_tags.append("mass_deficit")
    curve_tags = list(dict.fromkeys(all_tags))
    _emit(curve_tags, "density_curve")
    return DensityCurve(grid, density, cdf, total_mass, curve_tags, point_tags)
