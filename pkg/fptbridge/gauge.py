from typing import Dict, Union

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from fptbridge.boundary import MovingBoundary
from fptbridge.clock import VolatilityClock
from fptbridge.utils import DomainError, IllPosedBoundaryError, ReadOnly

ANCHORS = ("terminal", "initial")
DEFAULT_GAUGE_STEPS = 2048
Array = Union[float, np.ndarray]


def _out(value):
    value = np.asarray(value, dtype=float)
    return value if value.ndim else float(value)


class GaugeFunctions(ReadOnly):
    """Solutions of the gauge equations of the linear-potential propagator on [t_start, s]:

        pi' = beta',  v' = -h^2 pi,  pi_tilde' = -beta',  v_tilde' = h^2 pi_tilde,

    and the action S(t, tau) = 1/2 int_t^tau h^2 pi^2 du.

    The tilde functions vanish at t_start. With ``anchor="terminal"`` pi and v vanish at s,
    with ``anchor="initial"`` at t_start. Values between the nodes are cubic Hermite
    interpolants of the tabulated solution and its known derivative.

    Attributes:
        t_start (float): left end of the interval
        s (float): right end of the interval
        anchor (str): anchoring of pi and v
        nodes (np.ndarray): equidistant solver nodes
        table (dict): tabulated pi, v, pi_tilde, v_tilde and the cumulative action

    """

    def __init__(
        self, t_start: float, s: float, anchor: str, nodes: np.ndarray, table: Dict, slopes: Dict
    ):
        self.t_start = float(t_start)
        self.s = float(s)
        self.anchor = anchor
        self.nodes = nodes
        self.table = table
        self._splines = {
            name: CubicHermiteSpline(nodes, table[name], slopes[name], extrapolate=False)
            for name in table
        }
        self._freeze()

    def _evaluate(self, name: str, u: Array) -> Array:
        u = np.asarray(u, dtype=float)
        tol = 1e-12 * max(1.0, abs(self.s))
        if np.any(u < self.t_start - tol) or np.any(u > self.s + tol):
            raise DomainError(f"Gauge solved on [{self.t_start}, {self.s}], got {u}")
        return _out(self._splines[name](np.clip(u, self.t_start, self.s)))

    def pi(self, t: Array) -> Array:
        return self._evaluate("pi", t)

    def v(self, t: Array) -> Array:
        return self._evaluate("v", t)

    def pi_tilde(self, tau: Array) -> Array:
        return self._evaluate("pi_tilde", tau)

    def v_tilde(self, tau: Array) -> Array:
        return self._evaluate("v_tilde", tau)

    def action(self, t: Array, tau: Array) -> Array:
        """S(t, tau) = 1/2 int_t^tau h^2(u) pi^2(u) du."""
        return _out(
            np.asarray(self._evaluate("action", tau)) - np.asarray(self._evaluate("action", t))
        )

    def tabulate(self, grid: Array) -> Dict[str, np.ndarray]:
        """All gauge functions on ``grid``, the action measured from t_start."""
        grid = np.asarray(grid, dtype=float)
        return {
            "t": grid,
            "pi": np.asarray(self.pi(grid)),
            "v": np.asarray(self.v(grid)),
            "pi_tilde": np.asarray(self.pi_tilde(grid)),
            "v_tilde": np.asarray(self.v_tilde(grid)),
            "action": np.asarray(self.action(self.t_start, grid)),
        }

    @property
    def is_trivial(self) -> bool:
        """Whether all tabulated functions vanish identically."""
        return all(not np.any(values) for values in self.table.values())


def solve_gauge(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    t_start: float,
    s: float,
    anchor: str = "terminal",
    n_steps: int = DEFAULT_GAUGE_STEPS,
) -> GaugeFunctions:
    """Solve the gauge equations with classical Runge-Kutta on an equidistant grid of step
    (s - t_start) / n_steps.

    pi is the Simpson-integrated beta' (the RK4 step of a pure quadrature); v, v_tilde and the
    action are RK4 steps of the coupled linear systems, sharing the stage values of pi.

    Args:
        boundary (MovingBoundary): the boundary providing beta'
        clock (VolatilityClock): the clock providing h^2
        t_start (float): initial time
        s (float): terminal time
        anchor (str, optional (default="terminal")): "terminal" anchors pi(s) = v(s) = 0,
            "initial" anchors pi(t_start) = v(t_start) = 0
        n_steps (int, optional (default=2048)): number of RK4 steps

    Returns:
        GaugeFunctions: the tabulated solution

    Raises:
        DomainError: if t_start >= s or the anchor is unknown
        IllPosedBoundaryError: if beta' is not finite on the grid

    Example:
        >>> clock = VolatilityClock.constant()
        >>> gauge = solve_gauge(MovingBoundary.quadratic(1, 0, 1, clock), clock, 0.0, 1.0)
        >>> gauge.pi(0.0), gauge.v(0.0), gauge.action(0.0, 1.0)  # -2, -1, 2/3

    """
    if anchor not in ANCHORS:
        raise DomainError(f"Unknown anchor {anchor}, choose from {ANCHORS}")
    if not 0 <= t_start < s:
        raise DomainError(f"solve_gauge needs 0 <= t_start < s, got {t_start}, {s}")
    nodes = np.linspace(t_start, s, n_steps + 1)
    step = nodes[1] - nodes[0]
    mids = nodes[:-1] + 0.5 * step

    bp_nodes = np.asarray(boundary.beta_prime(nodes), dtype=float)
    bp_mids = np.asarray(boundary.beta_prime(mids), dtype=float)
    if not (np.all(np.isfinite(bp_nodes)) and np.all(np.isfinite(bp_mids))):
        raise IllPosedBoundaryError(f"beta' is not finite on [{t_start}, {s}]")
    h2_nodes = np.asarray(clock.h2(nodes), dtype=float)
    h2_mids = np.asarray(clock.h2(mids), dtype=float)

    def accumulate(increments):
        return np.concatenate([[0.0], np.cumsum(increments)])

    integral = accumulate(step / 6 * (bp_nodes[:-1] + 4 * bp_mids + bp_nodes[1:]))
    pi = integral - integral[-1] if anchor == "terminal" else integral
    pi_tilde = -integral

    # RK4 stage values of pi on each step
    p1 = pi[:-1]
    p2 = p1 + 0.5 * step * bp_nodes[:-1]
    p3 = p1 + 0.5 * step * bp_mids
    p4 = p1 + step * bp_mids
    h2_1, h2_m, h2_4 = h2_nodes[:-1], h2_mids, h2_nodes[1:]

    def rk4(k1, k2, k3, k4):
        return accumulate(step / 6 * (k1 + 2 * k2 + 2 * k3 + k4))

    v = rk4(-h2_1 * p1, -h2_m * p2, -h2_m * p3, -h2_4 * p4)
    if anchor == "terminal":
        v = v - v[-1]
    action = rk4(0.5 * h2_1 * p1**2, 0.5 * h2_m * p2**2, 0.5 * h2_m * p3**2, 0.5 * h2_4 * p4**2)
    q1 = pi_tilde[:-1]
    v_tilde = rk4(
        h2_1 * q1,
        h2_m * (q1 - 0.5 * step * bp_nodes[:-1]),
        h2_m * (q1 - 0.5 * step * bp_mids),
        h2_4 * (q1 - step * bp_mids),
    )

    table = {"pi": pi, "v": v, "pi_tilde": pi_tilde, "v_tilde": v_tilde, "action": action}
    for name, values in table.items():
        if not np.all(np.isfinite(values)):
            raise IllPosedBoundaryError(f"Gauge function {name} is not finite")
    slopes = {
        "pi": bp_nodes,
        "v": -h2_nodes * pi,
        "pi_tilde": -bp_nodes,
        "v_tilde": h2_nodes * pi_tilde,
        "action": 0.5 * h2_nodes * pi**2,
    }
    return GaugeFunctions(t_start, s, anchor, nodes, table, slopes)


class HTransformPrefactors(ReadOnly):
    """Prefactors reducing the conditioned backward and forward equations to heat equations:

        A(t) = 1 / (2 e(t)),  B(t) = c e(t)^(3/2),
        A_tilde(tau) = -1 / (2 e(tau)),  B_tilde(tau) = c e(tau)^(-1/2),

    with e(u) = H(s) - H(u) and c = 1. The passage kernel to (s, 0) is proportional to
    a exp(-A(t) a^2) / B(t).

    """

    def __init__(self, clock: VolatilityClock, s: float, c: float = 1.0):
        if not s > 0:
            raise DomainError(f"The terminal time must be positive, got {s}")
        self.clock = clock
        self.s = float(s)
        self.c = float(c)
        self._freeze()

    def remaining_variance(self, t: Array) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t >= self.s):
            raise DomainError(f"The prefactors need t < s={self.s}, got {t}")
        return np.asarray(self.clock.variance_between(t, self.s), dtype=float)

    def A(self, t: Array) -> Array:
        return _out(1.0 / (2 * self.remaining_variance(t)))

    def B(self, t: Array) -> Array:
        return _out(self.c * self.remaining_variance(t) ** 1.5)

    def A_tilde(self, tau: Array) -> Array:
        return _out(-1.0 / (2 * self.remaining_variance(tau)))

    def B_tilde(self, tau: Array) -> Array:
        return _out(self.c * self.remaining_variance(tau) ** -0.5)


def h_transform_prefactors(clock: VolatilityClock, s: float) -> HTransformPrefactors:
    """Prefactors A, B, A_tilde, B_tilde for terminal time s, with c = 1."""
    return HTransformPrefactors(clock, s)
