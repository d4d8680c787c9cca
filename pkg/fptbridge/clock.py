from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import bisect

from fptbridge.numerics import integrate_adaptive
from fptbridge.utils import DomainError, ReadOnly, five_point_derivative

KINDS = ("constant", "exponential", "power", "tabulated", "custom")
DEFAULT_HORIZON = 10.0


class VolatilityClock(ReadOnly):
    """Deterministic quadratic variation <M>_t = H(t) = int_0^t h^2(u) du of a continuous
    martingale dM = h dB, and the time change it induces.

    The kinds are

        * ``constant``: h(u) = sigma
        * ``exponential``: h(u) = sigma exp(rate u)
        * ``power``: h(u) = sigma (1 + u)^exponent
        * ``tabulated``: h sampled at ``times``, h^2 interpolated monotonically (PCHIP) and H the
          exact antiderivative of the interpolant
        * ``custom``: any positive callable h, H by adaptive quadrature

    Instances are read-only, so they can be shared between threads.

    Args:
        kind (str, optional (default="constant")): kind of the clock
        sigma (float, optional (default=1.0)): scale of h
        rate (float, optional (default=None)): rate of the exponential kind
        exponent (float, optional (default=None)): exponent of the power kind
        times (list, optional (default=None)): sampling times of the tabulated kind,
            starting at 0
        values (list, optional (default=None)): samples of h of the tabulated kind
        h (callable, optional (default=None)): volatility of the custom kind
        horizon (float, optional (default=None)): working horizon, defaults to 10 or
            the last tabulated time

    Attributes:
        kind (str): kind of the clock
        horizon (float): working horizon, the range of inverse_clock is [0, H(horizon)]

    Raises:
        DomainError: if the parameters do not define a positive volatility

    """

    def __init__(
        self,
        kind: str = "constant",
        sigma: float = 1.0,
        rate: Optional[float] = None,
        exponent: Optional[float] = None,
        times: Optional[Sequence[float]] = None,
        values: Optional[Sequence[float]] = None,
        h: Optional[Callable[[float], float]] = None,
        horizon: Optional[float] = None,
    ):
        if kind not in KINDS:
            raise DomainError(f"Unknown clock kind {kind}, choose from {KINDS}")
        if not sigma > 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        self.kind = kind
        self.sigma = float(sigma)
        self.rate = None
        self.exponent = None
        self._h_fn = None

        if kind == "exponential":
            if rate is None:
                raise DomainError("The exponential clock needs a rate")
            self.rate = float(rate)
        elif kind == "power":
            if exponent is None:
                raise DomainError("The power clock needs an exponent")
            self.exponent = float(exponent)
        elif kind == "tabulated":
            self._init_tabulated(times, values)
            if horizon is None:
                horizon = self.times[-1]
            elif horizon > self.times[-1]:
                raise DomainError(
                    f"horizon {horizon} exceeds the last tabulated time {self.times[-1]}"
                )
        elif kind == "custom":
            if not callable(h):
                raise DomainError("The custom clock needs a callable h")
            self._h_fn = h

        self.horizon = float(DEFAULT_HORIZON if horizon is None else horizon)
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {horizon}")
        self._freeze()

    def _init_tabulated(self, times, values):
        if times is None or values is None:
            raise DomainError("The tabulated clock needs times and values")
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.shape != values.shape or len(times) < 2:
            raise DomainError("times and values must have the same length of at least 2")
        if times[0] != 0 or np.any(np.diff(times) <= 0):
            raise DomainError("times must start at 0 and increase strictly")
        if np.any(values <= 0):
            raise DomainError("Tabulated volatilities must be positive")
        self.times = times
        self.values = values
        self._h2_interp = PchipInterpolator(times, self.sigma**2 * values**2, extrapolate=False)
        self._h2_antiderivative = self._h2_interp.antiderivative()
        self._h2_derivative = self._h2_interp.derivative()

    @classmethod
    def constant(cls, sigma: float = 1.0, horizon: Optional[float] = None):
        return cls("constant", sigma=sigma, horizon=horizon)

    @classmethod
    def exponential(cls, rate: float, sigma: float = 1.0, horizon: Optional[float] = None):
        return cls("exponential", sigma=sigma, rate=rate, horizon=horizon)

    @classmethod
    def power(cls, exponent: float, sigma: float = 1.0, horizon: Optional[float] = None):
        return cls("power", sigma=sigma, exponent=exponent, horizon=horizon)

    @classmethod
    def tabulated(cls, times, values, horizon: Optional[float] = None):
        return cls("tabulated", times=times, values=values, horizon=horizon)

    @classmethod
    def custom(cls, h: Callable[[float], float], horizon: Optional[float] = None):
        return cls("custom", h=h, horizon=horizon)

    def __repr__(self):
        return f"{self.__class__.__name__}({self.to_dict()})"

    def to_dict(self) -> dict:
        """Parameters of the clock, as they appear in the clock section of a run config."""
        result = {"kind": self.kind, "sigma": self.sigma, "horizon": self.horizon}
        if self.kind == "exponential":
            result["rate"] = self.rate
        elif self.kind == "power":
            result["exponent"] = self.exponent
        elif self.kind == "tabulated":
            result["times"] = self.times.tolist()
            result["values"] = self.values.tolist()
        return result

    @property
    def is_unit(self) -> bool:
        """Whether h is identically 1."""
        return self.kind == "constant" and self.sigma == 1.0

    @staticmethod
    def _check_time(t, name="t"):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(np.isnan(t)):
            raise DomainError(f"{name} must be non-negative, got {t}")
        return t

    def _check_tabulated_range(self, t):
        if self.kind == "tabulated" and np.any(t > self.times[-1]):
            raise DomainError(f"The tabulated clock ends at {self.times[-1]}, got {t}")

    def h(self, u: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Volatility h(u)."""
        return np.sqrt(self.h2(u))

    def h2(self, u: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Instantaneous variance rate h^2(u)."""
        u = self._check_time(u, "u")
        if self.kind == "constant":
            result = np.full(u.shape, self.sigma**2)
        elif self.kind == "exponential":
            result = self.sigma**2 * np.exp(2 * self.rate * u)
        elif self.kind == "power":
            result = self.sigma**2 * (1 + u) ** (2 * self.exponent)
        elif self.kind == "tabulated":
            self._check_tabulated_range(u)
            result = self._h2_interp(u)
        else:
            result = np.vectorize(lambda x: float(self._h_fn(x)) ** 2, otypes=[float])(u)
        return result if result.ndim else float(result)

    def h2_prime(self, u: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Derivative of h^2, analytic except for the custom kind."""
        u = self._check_time(u, "u")
        if self.kind == "constant":
            result = np.zeros(u.shape)
        elif self.kind == "exponential":
            result = 2 * self.rate * self.sigma**2 * np.exp(2 * self.rate * u)
        elif self.kind == "power":
            p = self.exponent
            result = 2 * p * self.sigma**2 * (1 + u) ** (2 * p - 1)
        elif self.kind == "tabulated":
            self._check_tabulated_range(u)
            result = self._h2_derivative(u)
        else:
            result = np.asarray(five_point_derivative(self.h2, u))
        return result if result.ndim else float(result)

    def cumulative_variance(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Cumulative variance H(t) = int_0^t h^2(u) du.

        Closed forms are used for the constant, exponential and power kinds, the exact
        antiderivative of the interpolant for the tabulated kind and adaptive quadrature to
        absolute 1e-12 for the custom kind.

        Raises:
            DomainError: if t < 0

        """
        t = self._check_time(t)
        s2 = self.sigma**2
        if self.kind == "constant":
            result = s2 * t
        elif self.kind == "exponential":
            if self.rate == 0:
                result = s2 * t
            else:
                result = s2 * np.expm1(2 * self.rate * t) / (2 * self.rate)
        elif self.kind == "power":
            q = 2 * self.exponent + 1
            if q == 0:
                result = s2 * np.log1p(t)
            else:
                result = s2 * np.expm1(q * np.log1p(t)) / q
        elif self.kind == "tabulated":
            self._check_tabulated_range(t)
            result = self._h2_antiderivative(t)
        else:
            result = np.vectorize(self.quadrature_variance, otypes=[float])(t)
        result = np.asarray(result, dtype=float)
        return result if result.ndim else float(result)

    def quadrature_variance(self, t: float) -> float:
        """H(t) by adaptive quadrature of h^2 to absolute 1e-12, whatever the kind."""
        t = float(self._check_time(t))
        return integrate_adaptive(lambda u: float(self.h2(u)), 0.0, t, tol=1e-12)

    def variance_between(
        self, t: Union[float, np.ndarray], tau: Union[float, np.ndarray]
    ) -> Union[float, np.ndarray]:
        """Variance H(tau) - H(t) accumulated between t and tau.

        Raises:
            DomainError: if tau < t or t < 0

        """
        if np.any(np.asarray(tau) < np.asarray(t)):
            raise DomainError(f"variance_between needs t <= tau, got t={t}, tau={tau}")
        return np.maximum(self.cumulative_variance(tau) - self.cumulative_variance(t), 0.0)

    def total_variance(self) -> float:
        """H(infinity), finite for decaying clocks; H(last time) for the tabulated kind."""
        s2 = self.sigma**2
        if self.kind == "constant":
            return np.inf
        if self.kind == "exponential":
            return s2 / (-2 * self.rate) if self.rate < 0 else np.inf
        if self.kind == "power":
            q = 2 * self.exponent + 1
            return s2 / (-q) if q < 0 else np.inf
        if self.kind == "tabulated":
            return float(self._h2_antiderivative(self.times[-1]))
        return integrate_adaptive(lambda u: float(self.h2(u)), 0.0, np.inf, tol=1e-12)

    def inverse_clock(self, theta: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Time t with H(t) = theta, for 0 <= theta <= H(horizon).

        The analytic kinds invert H in closed form, the others by bisection to absolute 1e-12
        in t.

        Raises:
            DomainError: if theta is outside [0, H(horizon)]

        """
        theta = np.asarray(theta, dtype=float)
        h_max = self.cumulative_variance(self.horizon)
        if np.any(theta < 0) or np.any(theta > h_max * (1 + 1e-12)) or np.any(np.isnan(theta)):
            raise DomainError(f"theta must lie in [0, {h_max}], got {theta}")
        theta = np.minimum(theta, h_max)
        s2 = self.sigma**2
        if self.kind == "constant":
            result = theta / s2
        elif self.kind == "exponential" and self.rate != 0:
            result = np.log1p(2 * self.rate * theta / s2) / (2 * self.rate)
        elif self.kind == "exponential":
            result = theta / s2
        elif self.kind == "power":
            q = 2 * self.exponent + 1
            if q == 0:
                result = np.expm1(theta / s2)
            else:
                result = np.expm1(np.log1p(q * theta / s2) / q)
        else:
            result = np.vectorize(self._bisect, otypes=[float])(theta)
        result = np.clip(result, 0.0, self.horizon)
        return result if result.ndim else float(result)

    def _bisect(self, theta: float) -> float:
        if theta == 0:
            return 0.0
        return bisect(
            lambda t: self.cumulative_variance(t) - theta, 0.0, self.horizon, xtol=1e-12
        )
