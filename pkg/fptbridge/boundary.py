from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as P

from fptbridge.clock import VolatilityClock
from fptbridge.utils import (
    DomainError,
    ReadOnly,
    SingularClockError,
    UnsupportedStartError,
    five_point_derivative,
)

KINDS = ("constant", "linear", "quadratic", "linear_in_variance", "polynomial", "ou", "custom")
DERIVATIVE_MODES = ("analytic", "finite_difference")
Array = Union[float, np.ndarray]


def _scalar_or_array(value):
    value = np.asarray(value, dtype=float)
    return value if value.ndim else float(value)


def _vectorized(fn: Optional[Callable]) -> Optional[Callable]:
    if fn is None:
        return None
    scalar = np.vectorize(lambda u: float(fn(u)), otypes=[float])
    return lambda u: scalar(np.asarray(u, dtype=float))


class MovingBoundary(ReadOnly):
    """Twice differentiable moving boundary f of the first passage problem
    T = inf{t >= 0 | M_t = f(t)}, together with b = f', beta = f'/h^2 and beta'.

    Boundaries starting below zero are reflected (M -> -M, f -> -f), which leaves T unchanged,
    so that ``a = f(0)`` is always positive.

    Args:
        f (callable): the boundary
        clock (VolatilityClock): the clock of the martingale
        fprime (callable, optional (default=None)): f', finite differences when missing
        fsecond (callable, optional (default=None)): f'', finite differences when missing
        derivative_mode (str, optional (default="analytic")): "analytic" or
            "finite_difference"; analytic needs both derivatives
        kind (str, optional (default="custom")): name of the preset
        coefficients (list, optional (default=None)): coefficients of the preset
        vectorized (bool, optional (default=False)): whether f and its derivatives accept arrays

    Attributes:
        a (float): the level f(0) > 0 after reflection
        negated (bool): whether the boundary was reflected
        horizon (float): working horizon, taken from the clock

    Raises:
        UnsupportedStartError: if f(0) = 0

    """

    def __init__(
        self,
        f: Callable,
        clock: VolatilityClock,
        fprime: Optional[Callable] = None,
        fsecond: Optional[Callable] = None,
        derivative_mode: str = "analytic",
        kind: str = "custom",
        coefficients: Optional[Sequence[float]] = None,
        vectorized: bool = False,
        extra: Optional[dict] = None,
    ):
        if derivative_mode not in DERIVATIVE_MODES:
            raise DomainError(
                f"Unknown derivative_mode {derivative_mode}, choose from {DERIVATIVE_MODES}"
            )
        if kind not in KINDS:
            raise DomainError(f"Unknown boundary kind {kind}, choose from {KINDS}")
        if not vectorized:
            f, fprime, fsecond = _vectorized(f), _vectorized(fprime), _vectorized(fsecond)
        if fprime is None or fsecond is None:
            derivative_mode = "finite_difference"

        start = float(f(np.asarray(0.0)))
        if not np.isfinite(start) or start == 0:
            raise UnsupportedStartError(
                f"The boundary must not start at the process' origin, got f(0) = {start}"
            )
        self.negated = start < 0
        sign = -1.0 if self.negated else 1.0
        self._f = f
        self._fprime = fprime
        self._fsecond = fsecond
        self._sign = sign
        self.clock = clock
        self.kind = kind
        self.coefficients = None if coefficients is None else [float(c) for c in coefficients]
        self.derivative_mode = derivative_mode
        self.extra = dict(extra) if extra else {}
        self.a = abs(start)
        self.horizon = clock.horizon
        self._freeze()

    def __repr__(self):
        return f"{self.__class__.__name__}({self.to_dict()})"

    def to_dict(self) -> dict:
        """Parameters of the boundary, as they appear in the boundary section of a run config."""
        result = {"kind": self.kind, "derivative_mode": self.derivative_mode}
        if self.coefficients is not None:
            result["coefficients"] = self.coefficients
        result.update(self.extra)
        return result

    @classmethod
    def constant(cls, a: float, clock: VolatilityClock, **kwargs):
        """f(t) = a."""
        return cls.polynomial([a], clock, kind="constant", **kwargs)

    @classmethod
    def linear(cls, a: float, c: float, clock: VolatilityClock, **kwargs):
        """f(t) = a + c t."""
        return cls.polynomial([a, c], clock, kind="linear", **kwargs)

    @classmethod
    def quadratic(cls, a: float, c1: float, c2: float, clock: VolatilityClock, **kwargs):
        """f(t) = a + c1 t + c2 t^2."""
        return cls.polynomial([a, c1, c2], clock, kind="quadratic", **kwargs)

    @classmethod
    def polynomial(
        cls,
        coefficients: Sequence[float],
        clock: VolatilityClock,
        kind: str = "polynomial",
        derivative_mode: str = "analytic",
    ):
        """Polynomial boundary with coefficients in ascending powers."""
        coefficients = np.asarray(coefficients, dtype=float)
        first = P.polyder(coefficients, 1)
        second = P.polyder(coefficients, 2)
        return cls(
            f=lambda t: P.polyval(t, coefficients),
            fprime=lambda t: P.polyval(t, first),
            fsecond=lambda t: P.polyval(t, second),
            clock=clock,
            derivative_mode=derivative_mode,
            kind=kind,
            coefficients=coefficients.tolist(),
            vectorized=True,
        )

    @classmethod
    def linear_in_variance(
        cls, a: float, c: float, clock: VolatilityClock, derivative_mode: str = "analytic"
    ):
        """f(t) = a + c H(t), for which beta = c and beta' = 0 on any clock."""
        return cls(
            f=lambda t: a + c * clock.cumulative_variance(t),
            fprime=lambda t: c * clock.h2(t),
            fsecond=lambda t: c * clock.h2_prime(t),
            clock=clock,
            derivative_mode=derivative_mode,
            kind="linear_in_variance",
            coefficients=[a, c],
            vectorized=True,
        )

    def f(self, u: Array) -> Array:
        """The (possibly reflected) boundary f(u)."""
        u = self.clock._check_time(u, "u")
        return _scalar_or_array(self._sign * self._f(u))

    def fprime(self, u: Array) -> Array:
        """b(u) = f'(u)."""
        u = self.clock._check_time(u, "u")
        if self.derivative_mode == "analytic":
            return _scalar_or_array(self._sign * self._fprime(u))
        return _scalar_or_array(five_point_derivative(self.f, u))

    b = fprime

    def fsecond(self, u: Array) -> Array:
        """f''(u)."""
        u = self.clock._check_time(u, "u")
        if self.derivative_mode == "analytic":
            return _scalar_or_array(self._sign * self._fsecond(u))
        return _scalar_or_array(five_point_derivative(self.fprime, u))

    def _h2(self, u):
        h2 = np.asarray(self.clock.h2(u))
        if np.any(h2 <= 0):
            raise SingularClockError(f"h vanishes at u = {u}")
        return h2

    def beta(self, u: Array) -> Array:
        """beta(u) = f'(u) / h^2(u).

        Raises:
            SingularClockError: if h(u) = 0
            DomainError: if u < 0

        """
        u = self.clock._check_time(u, "u")
        return _scalar_or_array(self.fprime(u) / self._h2(u))

    def beta_prime(self, u: Array) -> Array:
        """beta'(u), analytic as (f'' h^2 - f' (h^2)') / h^4 in analytic mode, otherwise the
        five-point difference of beta."""
        u = self.clock._check_time(u, "u")
        if self.derivative_mode == "analytic":
            h2 = self._h2(u)
            value = (self.fsecond(u) * h2 - self.fprime(u) * self.clock.h2_prime(u)) / h2**2
            return _scalar_or_array(value)
        return _scalar_or_array(five_point_derivative(self.beta, u))

    def b_beta(self, u: Array) -> Array:
        """Integrand b(u) beta(u) of the quadratic Girsanov term."""
        u = self.clock._check_time(u, "u")
        fprime = self.fprime(u)
        return _scalar_or_array(fprime * fprime / self._h2(u))

    def with_derivative_mode(self, derivative_mode: str) -> "MovingBoundary":
        """The same boundary with another derivative mode."""
        return MovingBoundary(
            f=self._f,
            fprime=self._fprime,
            fsecond=self._fsecond,
            clock=self.clock,
            derivative_mode=derivative_mode,
            kind=self.kind,
            coefficients=self.coefficients,
            vectorized=True,
            extra=self.extra,
        )

    def _grid(self, t0: float = 0.0, t1: Optional[float] = None, n: int = 201):
        return np.linspace(t0, self.horizon if t1 is None else t1, n)

    def beta_prime_min(self, t0: float = 0.0, t1: Optional[float] = None, n: int = 201) -> float:
        """Smallest beta' on an n-point grid of [t0, t1]."""
        return float(np.min(self.beta_prime(self._grid(t0, t1, n))))

    def hypothesis_holds(self, t0: float = 0.0, t1: Optional[float] = None, tol=1e-10) -> bool:
        """Whether beta' >= 0 on [t0, t1] (the horizon by default), up to ``tol``."""
        return self.beta_prime_min(t0, t1) >= -tol

    def beta_prime_bound(self, t0: float, t1: float, n: int = 65) -> float:
        """Largest |beta'| on an n-point grid of [t0, t1]."""
        return float(np.max(np.abs(self.beta_prime(self._grid(t0, t1, n)))))

    def derivative_consistency(self, n: int = 101) -> dict:
        """Largest relative discrepancy between analytic and finite-difference derivatives.

        Only meaningful in analytic mode; finite-difference boundaries report zeros.

        """
        grid = self._grid(n=n)
        fd = self.with_derivative_mode("finite_difference")
        result = {}
        for name in ("fprime", "fsecond", "beta", "beta_prime"):
            exact = np.asarray(getattr(self, name)(grid))
            approx = np.asarray(getattr(fd, name)(grid))
            scale = np.maximum(np.abs(exact), 1e-3 * max(np.abs(exact).max(), 1e-300))
            result[name] = float(np.max(np.abs(exact - approx) / scale))
        return result

    def smoothness_checks(self, n: int = 101, tol: float = 1e-6) -> dict:
        """Finite-difference checks of the smoothness conditions on the horizon.

        Both "f in C^2" and "f/h in C^2" are recorded, together with "f'/h in C^2"; a check
        passes when the second derivative is finite on the grid and, in analytic mode, agrees
        with the difference of the first derivative to relative ``tol``.

        """
        grid = self._grid(n=n)

        def second_derivative_finite(fn):
            first = lambda u: five_point_derivative(fn, u)  # noqa: E731
            return bool(np.all(np.isfinite(five_point_derivative(first, grid))))

        consistency = (
            self.derivative_consistency(n)
            if self.derivative_mode == "analytic"
            else {"fsecond": 0.0, "beta_prime": 0.0}
        )
        return {
            "f_c2": bool(np.all(np.isfinite(self.fsecond(grid))))
            and consistency["fsecond"] < tol,
            "f_over_h_c2": second_derivative_finite(lambda u: self.f(u) / self.clock.h(u)),
            "fprime_over_h_c2": second_derivative_finite(
                lambda u: self.fprime(u) / self.clock.h(u)
            ),
            "beta_c1": bool(np.all(np.isfinite(self.beta_prime(grid))))
            and consistency["beta_prime"] < tol,
            "beta_prime_nonnegative": self.hypothesis_holds(),
        }


def ou_to_martingale(
    g: Union[Callable, Sequence[float]],
    horizon: float,
    rate: float = 1.0,
    sigma: float = 1.0,
    g_prime: Optional[Callable] = None,
    g_second: Optional[Callable] = None,
) -> Tuple[VolatilityClock, MovingBoundary]:
    """Map the first passage of dX = -rate X dt + sigma dB, X_0 = 0, through g onto a
    martingale problem.

    With M_t = int_0^t sigma exp(rate u) dB_u = X_t exp(rate t) the passage time of X through
    g is the passage time of M through f(t) = g(t) exp(rate t), and M runs on the clock
    h(u) = sigma exp(rate u).

    Args:
        g (callable or list): the OU boundary, or its polynomial coefficients in ascending powers
        horizon (float): working horizon of the clock
        rate (float, optional (default=1.0)): mean-reversion rate
        sigma (float, optional (default=1.0)): noise scale
        g_prime (callable, optional (default=None)): g', finite differences when missing
        g_second (callable, optional (default=None)): g'', finite differences when missing

    Returns:
        tuple: (VolatilityClock, MovingBoundary)

    Raises:
        UnsupportedStartError: if g(0) <= 0

    Example:
        >>> clock, boundary = ou_to_martingale(lambda t: 2.0, horizon=3.0)
        >>> boundary.beta(1.0)  # 2 exp(-1)

    """
    coefficients = None
    if callable(g):
        g_fn, g1, g2 = _vectorized(g), _vectorized(g_prime), _vectorized(g_second)
    else:
        coefficients = np.asarray(g, dtype=float)
        first, second = P.polyder(coefficients, 1), P.polyder(coefficients, 2)
        g_fn = lambda t: P.polyval(t, coefficients)  # noqa: E731
        g1 = lambda t: P.polyval(t, first)  # noqa: E731
        g2 = lambda t: P.polyval(t, second)  # noqa: E731
    start = float(g_fn(np.asarray(0.0)))
    if not start > 0:
        raise UnsupportedStartError(f"The OU boundary must start above 0, got g(0) = {start}")

    clock = VolatilityClock.exponential(rate=rate, sigma=sigma, horizon=horizon)
    k = float(rate)

    def f(t):
        return g_fn(t) * np.exp(k * t)

    if g1 is None or g2 is None:
        fprime = fsecond = None
    else:

        def fprime(t):
            return (g1(t) + k * g_fn(t)) * np.exp(k * t)

        def fsecond(t):
            return (g2(t) + 2 * k * g1(t) + k**2 * g_fn(t)) * np.exp(k * t)

    boundary = MovingBoundary(
        f=f,
        fprime=fprime,
        fsecond=fsecond,
        clock=clock,
        derivative_mode="analytic",
        kind="ou",
        coefficients=None if coefficients is None else coefficients.tolist(),
        vectorized=True,
        extra={"ou_rate": k, "ou_sigma": float(sigma)},
    )
    return clock, boundary
