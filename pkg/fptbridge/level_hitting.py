import warnings
from typing import Union

import numpy as np
from scipy.special import erfc

from fptbridge.clock import VolatilityClock
from fptbridge.numerics import integrate_adaptive
from fptbridge.utils import DegenerateIntervalWarning, DomainError, ReadOnly

Array = Union[float, np.ndarray]
DEGENERATE_VARIANCE = 1e-14
_LOG_2PI = np.log(2 * np.pi)


def _out(value):
    value = np.asarray(value, dtype=float)
    return value if value.ndim else float(value)


def _hitting_density(distance, h2, variance):
    """distance h^2 (2 pi variance^3)^(-1/2) exp(-distance^2 / (2 variance)), zero where the
    variance or the distance vanishes."""
    distance, h2, variance = np.broadcast_arrays(
        np.asarray(distance, dtype=float), np.asarray(h2, dtype=float), np.asarray(variance)
    )
    result = np.zeros(distance.shape)
    ok = (variance > 0) & (distance > 0)
    d, v = distance[ok], variance[ok]
    log_value = np.log(d) + np.log(h2[ok]) - 0.5 * _LOG_2PI - 1.5 * np.log(v) - d * d / (2 * v)
    result[ok] = np.exp(log_value)
    return result


def passage_kernel(clock: VolatilityClock, t0: Array, x: Array, t: Array, y: Array) -> Array:
    """Density in t of the first time the time-changed Brownian motion started from x at t0
    reaches y:

        |x - y| h^2(t) (2 pi (H(t) - H(t0))^3)^(-1/2) exp(-(x - y)^2 / (2 (H(t) - H(t0))))

    Caution:
        The |x - y| factor makes the kernel a probability density in t. Intervals with clock
        variance below 1e-14 return 0 with a DegenerateIntervalWarning.

    Raises:
        DomainError: if t <= t0

    """
    t0, t = np.asarray(t0, dtype=float), np.asarray(t, dtype=float)
    if np.any(t <= t0):
        raise DomainError(f"passage_kernel needs t > t0, got t0={t0}, t={t}")
    variance = clock.variance_between(t0, t)
    if np.any(np.asarray(variance) < DEGENERATE_VARIANCE):
        warnings.warn(
            f"Clock variance {np.min(variance)} between {t0} and {t} is below resolution",
            DegenerateIntervalWarning,
        )
        variance = np.where(np.asarray(variance) < DEGENERATE_VARIANCE, 0.0, variance)
    distance = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return _out(_hitting_density(distance, clock.h2(t), variance))


class LevelHittingLaw(ReadOnly):
    """Law of T_a = inf{t >= 0 | M_t = a} for M on a deterministic clock.

    Args:
        clock (VolatilityClock): the clock of the martingale
        a (float): the level, positive

    Raises:
        DomainError: if a <= 0

    """

    def __init__(self, clock: VolatilityClock, a: float):
        if not a > 0:
            raise DomainError(f"The level must be positive, got {a}")
        self.clock = clock
        self.a = float(a)
        self._freeze()

    def level_density(self, t: Array) -> Array:
        """phi_a(t) = a h^2(t) (2 pi H(t)^3)^(-1/2) exp(-a^2 / (2 H(t))), zero at t = 0.

        Raises:
            DomainError: if t < 0

        """
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError(f"level_density needs t >= 0, got {t}")
        variance = self.clock.cumulative_variance(t)
        return _out(_hitting_density(self.a, self.clock.h2(t), variance))

    def passage_kernel(self, t0: Array, x: Array, t: Array, y: Array) -> Array:
        """See :func:`passage_kernel`."""
        return passage_kernel(self.clock, t0, x, t, y)

    def level_cdf(self, t: Array, method: str = "closed_form") -> Array:
        """P(T_a <= t).

        The substitution r = a / sqrt(2 H(u)) turns phi_a(u) du into 2/sqrt(pi) exp(-r^2) dr,
        so P(T_a <= t) = erfc(a / sqrt(2 H(t))). ``method="quadrature"`` evaluates the
        transformed integral with adaptive quadrature instead of the closed form.

        Args:
            t (float or array): time, np.inf for the total mass
            method (str, optional (default="closed_form")): "closed_form" or "quadrature"

        """
        if method not in ("closed_form", "quadrature"):
            raise DomainError(f"Unknown method {method}")
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError(f"level_cdf needs t >= 0, got {t}")
        r = self.r_of_time(t)
        if method == "closed_form":
            return _out(erfc(r))
        weight = 2 / np.sqrt(np.pi)
        values = [
            integrate_adaptive(lambda x: weight * np.exp(-x * x), ri, np.inf, tol=1e-13)
            if np.isfinite(ri)
            else 0.0
            for ri in np.atleast_1d(r)
        ]
        return _out(np.reshape(np.clip(values, 0.0, 1.0), r.shape))

    def r_of_time(self, t: Array) -> np.ndarray:
        """Similarity variable r = a / sqrt(2 H(t)), infinite at t = 0."""
        t = np.asarray(t, dtype=float)
        infinite = np.isinf(t)
        variance = np.asarray(self.clock.cumulative_variance(np.where(infinite, 0.0, t)))
        if np.any(infinite):
            variance = np.where(infinite, self.clock.total_variance(), variance)
        safe = np.maximum(variance, 1e-300)
        return np.where(variance > 0, self.a / np.sqrt(2 * safe), np.inf)

    def time_of_r(self, r: Array) -> Array:
        """Inverse of r_of_time, the time at which H = a^2 / (2 r^2)."""
        r = np.asarray(r, dtype=float)
        return self.clock.inverse_clock(self.a**2 / (2 * r * r))

    def total_mass(self) -> float:
        """P(T_a < infinity) = 2 (1 - Phi(a / sqrt(H(infinity)))), one for infinite variance."""
        total = self.clock.total_variance()
        if not np.isfinite(total):
            return 1.0
        return float(erfc(self.a / np.sqrt(2 * total)))
