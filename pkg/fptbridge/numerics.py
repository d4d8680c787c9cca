from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad
from scipy.linalg import solve_banded, LinAlgError

from fptbridge.utils import DomainError, GridError, QuadratureError, SolverError

_SUBSTITUTIONS = {None, "sqrt_lo", "sqrt_hi"}
_BACKWARD_PDES = {"heat", "bridge", "schrodinger"}
_FORWARD_PDES = {"heat", "bridge", "schrodinger"}


def integrate_adaptive(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-10,
    substitution: Optional[str] = None,
    rtol: float = 1e-12,
    limit: int = 200,
    points: Optional[Sequence[float]] = None,
) -> float:
    """Adaptive Gauss-Kronrod quadrature with absolute tolerance ``tol``.

    Infinite upper limits are mapped to a finite interval by QUADPACK. Integrable
    inverse-square-root singularities at an endpoint are removed by the substitution hints
    ``"sqrt_lo"`` (u = lo + w^2) and ``"sqrt_hi"`` (u = hi - w^2).

    Args:
        fn (callable): scalar integrand
        lo (float): lower limit
        hi (float): upper limit, may be np.inf
        tol (float, optional (default=1e-10)): absolute tolerance
        substitution (str, optional (default=None)): endpoint substitution hint
        rtol (float, optional (default=1e-12)): relative tolerance
        limit (int, optional (default=200)): maximal number of subintervals
        points (list, optional (default=None)): break points inside (lo, hi)

    Returns:
        float: value of the integral

    Raises:
        DomainError: if lo > hi or the substitution hint is unknown
        QuadratureError: if the requested tolerance is not reached

    """
    if substitution not in _SUBSTITUTIONS:
        raise DomainError(f"Unknown substitution {substitution}, choose from {_SUBSTITUTIONS}")
    if not lo <= hi:
        raise DomainError(f"Integration limits must satisfy lo <= hi, got [{lo}, {hi}]")
    if lo == hi:
        return 0.0
    if substitution is not None and not np.isfinite(hi):
        raise DomainError("Endpoint substitutions need finite limits")

    if substitution == "sqrt_lo":
        integrand = lambda w: 2.0 * w * fn(lo + w * w)  # noqa: E731
        a, b = 0.0, np.sqrt(hi - lo)
        points = None if points is None else [np.sqrt(p - lo) for p in points]
    elif substitution == "sqrt_hi":
        integrand = lambda w: 2.0 * w * fn(hi - w * w)  # noqa: E731
        a, b = 0.0, np.sqrt(hi - lo)
        points = None if points is None else [np.sqrt(hi - p) for p in points]
    else:
        integrand = fn
        a, b = lo, hi

    kwargs = dict(epsabs=tol, epsrel=rtol, limit=limit, full_output=1)
    if points is not None and np.isfinite(b):
        kwargs["points"] = sorted(points)
    result = quad(integrand, a, b, **kwargs)
    value, abserr = result[0], result[1]
    if len(result) > 3 and abserr > max(tol, rtol * abs(value)):
        raise QuadratureError(f"Quadrature failed ({result[3]})", lo, hi, value, abserr)
    if not np.isfinite(value):
        raise QuadratureError("Quadrature returned a non-finite value", lo, hi, value, abserr)
    return value


@lru_cache(maxsize=32)
def _legendre_nodes(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return leggauss(n)


def gauss_legendre(
    fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, n: int = 64, panels: int = 1
) -> float:
    """Composite Gauss-Legendre rule of ``panels`` equal panels with ``n`` nodes each.

    ``fn`` must be vectorized.

    """
    nodes, weights = _legendre_nodes(int(n))
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return float(np.sum(w * fn(x)))


def gauss_legendre_nodes(lo: float, hi: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Legendre rule on [lo, hi]."""
    nodes, weights = _legendre_nodes(int(n))
    half = 0.5 * (hi - lo)
    return 0.5 * (hi + lo) + half * nodes, half * weights


@dataclass(frozen=True)
class ResidualGrid:
    """Evaluation nodes and finite-difference steps of a residual check.

    Attributes:
        times (np.ndarray): time nodes
        states (np.ndarray): state nodes
        dt (float): time step of the central time difference
        dx (float): state step of the five-point space differences

    """

    times: np.ndarray
    states: np.ndarray
    dt: float = 1e-4
    dx: float = 1e-3

    def refined(self, factor: float = 2.0) -> "ResidualGrid":
        """The same nodes with both steps divided by ``factor``."""
        return ResidualGrid(self.times, self.states, self.dt / factor, self.dx / factor)

    def describe(self) -> dict:
        return {
            "times": [float(np.min(self.times)), float(np.max(self.times)), len(self.times)],
            "states": [float(np.min(self.states)), float(np.max(self.states)), len(self.states)],
            "dt": self.dt,
            "dx": self.dx,
        }


@dataclass(frozen=True)
class ResidualReport:
    """Outcome of plugging a kernel into a PDE by finite differences.

    Attributes:
        pde (str): identifier of the equation
        grid (dict): description of the grid
        max_residual (float): largest relative residual over the retained nodes
        location (tuple): (time, state) of the largest residual
        n_points (int): number of retained nodes
        n_skipped (int): nodes skipped because all terms were negligible

    """

    pde: str
    grid: dict
    max_residual: float
    location: Tuple[float, float]
    n_points: int
    n_skipped: int = 0
    terms: dict = field(default_factory=dict, compare=False, repr=False)

    def passes(self, threshold: float) -> bool:
        return self.max_residual < threshold


def _validate_grid(grid: ResidualGrid, singular_times: Sequence[float]):
    if grid.dt <= 0 or grid.dx <= 0:
        raise GridError("Finite-difference steps must be positive")
    states = np.asarray(grid.states, dtype=float)
    times = np.asarray(grid.times, dtype=float)
    if np.any(states - 2 * grid.dx <= 0):
        raise GridError(
            f"State nodes down to {states.min()} with step {grid.dx} touch the line x = 0"
        )
    if np.any(times - grid.dt < 0):
        raise GridError(f"Time nodes down to {times.min()} with step {grid.dt} reach t < 0")
    for singular in singular_times:
        if np.any(np.abs(times - singular) <= grid.dt):
            raise GridError(f"Time nodes touch the singular time {singular}")


def _differences(kernel, grid: ResidualGrid):
    t, x = np.meshgrid(
        np.asarray(grid.times, dtype=float), np.asarray(grid.states, dtype=float), indexing="ij"
    )
    dt, dx = grid.dt, grid.dx
    k0 = kernel(t, x)
    k_t = (kernel(t + dt, x) - kernel(t - dt, x)) / (2 * dt)
    kp1, km1 = kernel(t, x + dx), kernel(t, x - dx)
    kp2, km2 = kernel(t, x + 2 * dx), kernel(t, x - 2 * dx)
    k_x = (-kp2 + 8 * kp1 - 8 * km1 + km2) / (12 * dx)
    k_xx = (-kp2 + 16 * kp1 - 30 * k0 + 16 * km1 - km2) / (12 * dx**2)
    return t, x, k0, k_t, k_x, k_xx


def _report(pde, grid, t, x, lhs, terms, floor) -> ResidualReport:
    magnitudes = np.stack([np.abs(lhs)] + [np.abs(term) for term in terms.values()])
    scale = magnitudes.max(axis=0)
    residual = np.abs(lhs - sum(terms.values()))
    global_scale = scale.max()
    if global_scale == 0:
        return ResidualReport(pde, grid.describe(), 0.0, (float(t.flat[0]), float(x.flat[0])), 0)
    keep = scale > floor * global_scale
    relative = np.zeros_like(residual)
    relative[keep] = residual[keep] / scale[keep]
    index = np.unravel_index(np.argmax(relative), relative.shape)
    return ResidualReport(
        pde=pde,
        grid=grid.describe(),
        max_residual=float(relative[index]),
        location=(float(t[index]), float(x[index])),
        n_points=int(keep.sum()),
        n_skipped=int((~keep).sum()),
        terms={k: float(np.abs(v).max()) for k, v in terms.items()},
    )


def check_backward_residual(
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
    clock,
    boundary,
    s: float,
    grid: ResidualGrid,
    pde: str = "bridge",
    floor: float = 1e-8,
    singular_times: Sequence[float] = (),
) -> ResidualReport:
    """Plug a kernel, as a function of its backward arguments (t, a), into a backward equation.

    The equations are

        * ``heat``: -K_t = 1/2 h^2 K_aa
        * ``bridge``: -K_t = 1/2 h^2 K_aa + h^2 (1/a - a/(H(s)-H(t))) K_a
        * ``schrodinger``: -K_t = 1/2 h^2 K_aa - beta'(t) a K

    Time derivatives are central second-order differences, space derivatives five-point
    fourth-order differences. The residual at a node is normalized by the largest term there;
    nodes where every term is below ``floor`` times the largest term on the grid are skipped.

    Args:
        kernel (callable): vectorized kernel K(t, a)
        clock (VolatilityClock): the clock
        boundary (MovingBoundary): the boundary, needed for ``schrodinger``
        s (float): singular time of the kernel (its forward time or bridge end)
        grid (ResidualGrid): nodes and steps
        pde (str, optional (default="bridge")): equation identifier
        floor (float, optional (default=1e-8)): relative floor for skipped nodes
        singular_times (list, optional (default=())): further singular times

    Raises:
        GridError: if the stencils touch a = 0, t < 0 or a singular time

    """
    if pde not in _BACKWARD_PDES:
        raise DomainError(f"Unknown backward equation {pde}, choose from {_BACKWARD_PDES}")
    if pde == "schrodinger" and boundary is None:
        raise DomainError("The schrodinger equation needs a boundary for its potential")
    _validate_grid(grid, [s, *singular_times])
    t, a, k0, k_t, k_a, k_aa = _differences(kernel, grid)
    h2 = clock.h2(t)
    terms = {"diffusion": 0.5 * h2 * k_aa}
    if pde == "bridge":
        remaining = clock.cumulative_variance(s) - clock.cumulative_variance(t)
        terms["drift"] = h2 * (1.0 / a - a / remaining) * k_a
    elif pde == "schrodinger":
        terms["potential"] = -boundary.beta_prime(t) * a * k0
    return _report(f"backward_{pde}", grid, t, a, -k_t, terms, floor)


def check_forward_residual(
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
    clock,
    s: float,
    grid: ResidualGrid,
    pde: str = "bridge",
    boundary=None,
    floor: float = 1e-8,
    singular_times: Sequence[float] = (),
) -> ResidualReport:
    """Plug a kernel, as a function of its forward arguments (tau, y), into a forward equation.

    The equations are

        * ``heat``: p_tau = 1/2 h^2 p_yy
        * ``bridge``: p_tau = 1/2 h^2 p_yy - h^2 (1/y - y/e) p_y + h^2 (1/y^2 + 1/e) p,
          with e = H(s) - H(tau), the Fokker-Planck equation of the conditioned process
        * ``schrodinger``: p_tau = 1/2 h^2 p_yy - beta'(tau) y p

    Arguments and normalization as in check_backward_residual; ``singular_times`` should
    contain the start time of the kernel.

    """
    if pde not in _FORWARD_PDES:
        raise DomainError(f"Unknown forward equation {pde}, choose from {_FORWARD_PDES}")
    if pde == "schrodinger" and boundary is None:
        raise DomainError("The schrodinger equation needs a boundary for its potential")
    _validate_grid(grid, [s, *singular_times])
    tau, y, p0, p_t, p_y, p_yy = _differences(kernel, grid)
    h2 = clock.h2(tau)
    terms = {"diffusion": 0.5 * h2 * p_yy}
    if pde == "bridge":
        remaining = clock.cumulative_variance(s) - clock.cumulative_variance(tau)
        terms["drift"] = -h2 * (1.0 / y - y / remaining) * p_y
        terms["zero_order"] = h2 * (1.0 / y**2 + 1.0 / remaining) * p0
    elif pde == "schrodinger":
        terms["potential"] = -boundary.beta_prime(tau) * y * p0
    return _report(f"forward_{pde}", grid, tau, y, p_t, terms, floor)


def estimate_convergence_order(residuals: Sequence[float], steps: Sequence[float]) -> float:
    """Least-squares slope of log(residual) against log(step)."""
    residuals = np.asarray(residuals, dtype=float)
    steps = np.asarray(steps, dtype=float)
    if len(residuals) < 2 or np.any(residuals <= 0):
        raise DomainError("Need at least two positive residuals to estimate an order")
    return float(np.polyfit(np.log(steps), np.log(residuals), 1)[0])


def time_nodes(
    clock, start: float, end: float, n_steps: int, grading: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Time nodes from ``start`` to ``end`` and the clock variance covered up to each node.

    Without grading the nodes are equidistant in clock variance. With grading g the variance
    distance from ``start`` is geometric: D_k = g ((D + g)/g)^(k/n) - g.

    Returns:
        tuple: (times, distances), both of length n_steps + 1

    """
    h_start = float(clock.cumulative_variance(start))
    h_end = float(clock.cumulative_variance(end))
    total = abs(h_end - h_start)
    k = np.arange(n_steps + 1) / n_steps
    if grading is None:
        distances = total * k
    else:
        distances = grading * ((total + grading) / grading) ** k - grading
    distances[0], distances[-1] = 0.0, total
    return _times_at(clock, start, end, distances), distances


def _times_at(clock, start: float, end: float, distances: np.ndarray) -> np.ndarray:
    """Times at the given clock-variance distances from ``start`` towards ``end``."""
    h_start = float(clock.cumulative_variance(start))
    direction = 1.0 if end >= start else -1.0
    variances = np.clip(h_start + direction * distances, 0.0, None)
    times = np.array([clock.inverse_clock(v) for v in variances[1:-1]])
    return np.concatenate([[start], times, [end]])


def split_potential_steps(
    clock, boundary, start: float, end: float, distances: np.ndarray, length: float, cap: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Cut every step into ceil(|beta(later) - beta(earlier)| * length / cap) pieces.

    The pieces have equal clock variance. Returns the refined (times, distances).

    """
    times = _times_at(clock, start, end, distances)
    jumps = np.abs(np.diff(boundary.beta(times))) * length
    pieces = np.maximum(np.ceil(jumps / cap), 1).astype(int)
    if np.all(pieces == 1):
        return times, distances
    refined = [distances[:1]]
    for k, m in enumerate(pieces):
        refined.append(np.linspace(distances[k], distances[k + 1], m + 1)[1:])
    distances = np.concatenate(refined)
    return _times_at(clock, start, end, distances), distances


def evolve_reference_pde(
    clock,
    boundary,
    initial_profile: Union[np.ndarray, Callable[[np.ndarray], np.ndarray]],
    t0: float,
    t1: float,
    grid: np.ndarray,
    direction: str = "backward",
    n_steps: int = 400,
    potential: bool = True,
    grading: Optional[float] = None,
    startup_steps: int = 4,
    potential_step: Optional[float] = None,
) -> np.ndarray:
    """Crank-Nicolson evolution of the absorbed equation with linear potential.

    Backward: -w_u = 1/2 h^2 w_xx - beta'(u) x w, profile given at t1, returned at t0.
    Forward: p_tau = 1/2 h^2 p_yy - beta'(tau) y p, profile given at t0, returned at t1.
    Both are absorbing (Dirichlet) at x = 0 and at the far end of the grid. Diffusion steps
    use the exact clock increment, the potential enters through exact factors
    exp(-(beta(later) - beta(earlier)) x / 2) on both sides of each diffusion step. The first
    ``startup_steps`` steps are replaced by two implicit Euler half steps each.

    Args:
        clock (VolatilityClock): the clock
        boundary (MovingBoundary): the boundary providing beta, may be None without potential
        initial_profile (array or callable): profile at the starting end
        t0 (float): earlier time
        t1 (float): later time
        grid (np.ndarray): uniform state grid starting at 0
        direction (str, optional (default="backward")): "backward" or "forward"
        n_steps (int, optional (default=400)): number of time steps
        potential (bool, optional (default=True)): whether to include the potential
        grading (float, optional (default=None)): clock-variance offset of geometric grading
            towards the starting end, None for uniform steps
        startup_steps (int, optional (default=4)): number of damped start-up steps
        potential_step (float, optional (default=None)): largest potential exponent
            |beta(later) - beta(earlier)| * grid[-1] of a step, larger steps are subdivided.
            The subdivision only needs the boundary, so a run without potential given the
            same boundary and cap steps through the same nodes.

    Returns:
        np.ndarray: profile on ``grid`` at the other end

    Raises:
        SolverError: if a banded solve fails or produces non-finite values

    """
    if direction not in {"backward", "forward"}:
        raise DomainError(f"direction must be backward or forward, not {direction}")
    if not t0 < t1:
        raise DomainError(f"Need t0 < t1, got {t0} and {t1}")
    if (potential or potential_step is not None) and boundary is None:
        raise DomainError("A boundary is needed to evolve with the potential")
    if potential_step is not None and not potential_step > 0:
        raise DomainError(f"potential_step must be positive, got {potential_step}")
    grid = np.asarray(grid, dtype=float)
    dx = grid[1] - grid[0]
    if grid[0] != 0 or not np.allclose(np.diff(grid), dx, rtol=1e-9, atol=0):
        raise GridError("The state grid must be uniform and start at 0")

    profile = initial_profile(grid) if callable(initial_profile) else initial_profile
    w = np.array(profile, dtype=float)
    if w.shape != grid.shape:
        raise DomainError("The initial profile must match the grid")
    w[0] = w[-1] = 0.0

    start, end = (t1, t0) if direction == "backward" else (t0, t1)
    times, distances = time_nodes(clock, start, end, n_steps, grading)
    if potential_step is not None:
        times, distances = split_potential_steps(
            clock, boundary, start, end, distances, grid[-1], potential_step
        )
    increments = np.diff(distances)
    if potential:
        betas = boundary.beta(times)
        # integral of beta' over each step, from its earlier to its later time
        delta_beta = np.diff(betas) * np.sign(end - start)
    interior = grid[1:-1]
    inv_dx2 = 1.0 / dx**2

    def implicit(vec, c):
        ab = np.empty((3, len(vec)))
        ab[0, :] = -c * inv_dx2
        ab[1, :] = 1.0 + 2.0 * c * inv_dx2
        ab[2, :] = -c * inv_dx2
        try:
            return solve_banded((1, 1), ab, vec, check_finite=False)
        except (LinAlgError, ValueError) as error:
            raise SolverError(f"Banded solve failed: {error}")

    def explicit(vec, c):
        out = vec * (1.0 - 2.0 * c * inv_dx2)
        out[1:] += c * inv_dx2 * vec[:-1]
        out[:-1] += c * inv_dx2 * vec[1:]
        return out

    for k, increment in enumerate(increments):
        u = w[1:-1]
        if potential:
            half_factor = np.exp(-0.5 * delta_beta[k] * interior)
            u = u * half_factor
        c = 0.5 * increment
        if k < startup_steps:
            u = implicit(u, 0.5 * c)
            u = implicit(u, 0.5 * c)
        else:
            u = implicit(explicit(u, 0.5 * c), 0.5 * c)
        if potential:
            u = u * half_factor
        w[1:-1] = u
        if not np.all(np.isfinite(u)):
            raise SolverError(f"Non-finite profile after step {k} at time {times[k + 1]}")
    return w
