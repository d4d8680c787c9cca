import warnings
from typing import Union

import numpy as np
from scipy.special import ndtr

from fptbridge.clock import VolatilityClock
from fptbridge.level_hitting import DEGENERATE_VARIANCE, passage_kernel
from fptbridge.numerics import integrate_adaptive
from fptbridge.utils import DegenerateIntervalWarning, DomainError, ReadOnly

Array = Union[float, np.ndarray]
_LOG_2PI = np.log(2 * np.pi)


def _out(value):
    value = np.asarray(value, dtype=float)
    return value if value.ndim else float(value)


def _interval_variance(clock: VolatilityClock, t, tau, name: str):
    t, tau = np.asarray(t, dtype=float), np.asarray(tau, dtype=float)
    if np.any(tau <= t):
        raise DomainError(f"{name} needs tau > t, got t={t}, tau={tau}")
    variance = np.asarray(clock.variance_between(t, tau), dtype=float)
    degenerate = variance < DEGENERATE_VARIANCE
    if np.any(degenerate):
        warnings.warn(
            f"Clock variance {variance.min()} between {t} and {tau} is below resolution",
            DegenerateIntervalWarning,
        )
    return variance, degenerate


def _degenerate_value(value, degenerate, x, y):
    """Kernels on degenerate intervals: 0 off the diagonal, inf on it."""
    if not np.any(degenerate):
        return value
    value, degenerate, x, y = np.broadcast_arrays(value, degenerate, x, y)
    value = np.array(value, dtype=float)
    value[degenerate] = np.where(x[degenerate] == y[degenerate], np.inf, 0.0)
    return value


def _gaussian(distance, variance):
    safe = np.where(variance > 0, variance, 1.0)
    return np.exp(-0.5 * _LOG_2PI - 0.5 * np.log(safe) - distance**2 / (2 * safe))


def free_kernel(clock: VolatilityClock, t: Array, x: Array, tau: Array, y: Array) -> Array:
    """Transition density of the time-changed Brownian motion from (t, x) to (tau, y), a
    Gaussian in y with mean x and variance H(tau) - H(t).

    Raises:
        DomainError: if tau <= t

    """
    variance, degenerate = _interval_variance(clock, t, tau, "free_kernel")
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    value = _gaussian(y - x, variance)
    return _out(_degenerate_value(value, degenerate, x, y))


def absorbed_kernel_at(
    clock: VolatilityClock, x_barrier: float, t: Array, x: Array, tau: Array, y: Array
) -> Array:
    """Sub-probability density of the time-changed Brownian motion killed at ``x_barrier``,
    free(x -> y) - free(x -> 2 x_barrier - y).

    Raises:
        DomainError: if tau <= t or x and y lie on different sides of the barrier

    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    side = (x - x_barrier) * (y - x_barrier)
    if np.any(side < 0):
        raise DomainError(f"x={x} and y={y} lie on different sides of the barrier {x_barrier}")
    variance, degenerate = _interval_variance(clock, t, tau, "absorbed_kernel_at")
    safe = np.where(variance > 0, variance, 1.0)
    value = _gaussian(y - x, variance) * -np.expm1(-2 * side / safe)
    return _out(_degenerate_value(value, degenerate, x, y))


def image_kernel(clock: VolatilityClock, t: Array, x: Array, tau: Array, y: Array) -> Array:
    """Transition density absorbed at 0 by the method of images, free(x -> y) - free(x -> -y).

    Raises:
        DomainError: if tau <= t or x < 0 or y < 0

    """
    if np.any(np.asarray(x) < 0) or np.any(np.asarray(y) < 0):
        raise DomainError(f"image_kernel needs x, y >= 0, got x={x}, y={y}")
    return absorbed_kernel_at(clock, 0.0, t, x, tau, y)


class BridgeLaw(ReadOnly):
    """Law of the conditioned process Y = a - M given that M first reaches a at time s.

    Y solves dY = h dW + h^2 (1/Y - Y/(H(s) - H(t))) dt, starts at a and hits 0 exactly at s.
    Under the clock it is a three-dimensional Bessel bridge from a to 0.

    Args:
        clock (VolatilityClock): the clock
        a (float): start level, positive
        s (float): terminal time, positive

    Raises:
        DomainError: if a <= 0, s <= 0 or H(s) = 0

    """

    def __init__(self, clock: VolatilityClock, a: float, s: float):
        if not a > 0:
            raise DomainError(f"The start level must be positive, got {a}")
        if not s > 0:
            raise DomainError(f"The terminal time must be positive, got {s}")
        self.terminal_variance = float(clock.cumulative_variance(s))
        if not self.terminal_variance > 0:
            raise DomainError(f"The clock accumulates no variance up to s={s}")
        self.clock = clock
        self.a = float(a)
        self.s = float(s)
        self._freeze()

    def _check(self, t, x, tau, y):
        t, tau = np.asarray(t, dtype=float), np.asarray(tau, dtype=float)
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if np.any(t < 0) or np.any(tau <= t) or np.any(tau >= self.s):
            raise DomainError(
                f"The bridge transition needs 0 <= t < tau < s={self.s}, got t={t}, tau={tau}"
            )
        if np.any(x <= 0) or np.any(y < 0):
            raise DomainError(f"The bridge transition needs x > 0 and y >= 0, got {x}, {y}")
        remaining_t = self.terminal_variance - np.asarray(self.clock.cumulative_variance(t))
        remaining_tau = self.terminal_variance - np.asarray(self.clock.cumulative_variance(tau))
        variance, degenerate = _interval_variance(self.clock, t, tau, "bridge_transition")
        return t, x, tau, y, variance, degenerate, remaining_t, remaining_tau

    def bridge_transition(self, t: Array, x: Array, tau: Array, y: Array) -> Array:
        """Transition density of Y from (t, x) to (tau, y).

        This is the absorbed kernel reweighted by the passage kernels to the terminal point,
        passage_kernel(tau, y; s, 0) / passage_kernel(t, x; s, 0) * image_kernel(t, x; tau, y),
        evaluated in log space:

            (y/x) (e_t/e_tau)^(3/2) (2 pi v)^(-1/2)
            exp(-(y - x)^2/(2 v) - y^2/(2 e_tau) + x^2/(2 e_t)) (1 - exp(-2 x y / v))

        with v = H(tau) - H(t), e_t = H(s) - H(t) and e_tau = H(s) - H(tau).

        Raises:
            DomainError: unless 0 <= t < tau < s, x > 0 and y >= 0

        """
        t, x, tau, y, v, degenerate, e_t, e_tau = self._check(t, x, tau, y)
        x, y, v, e_t, e_tau = np.broadcast_arrays(x, y, v, e_t, e_tau)
        result = np.zeros(y.shape)
        ok = (y > 0) & (v > 0)
        xo, yo, vo, eto, etauo = x[ok], y[ok], v[ok], e_t[ok], e_tau[ok]
        log_value = (
            np.log(yo / xo)
            + 1.5 * np.log(eto / etauo)
            - 0.5 * (_LOG_2PI + np.log(vo))
            - (yo - xo) ** 2 / (2 * vo)
            - yo**2 / (2 * etauo)
            + xo**2 / (2 * eto)
            + np.log(-np.expm1(-2 * xo * yo / vo))
        )
        result[ok] = np.exp(log_value)
        return _out(_degenerate_value(result, degenerate, x, y))

    def bridge_transition_by_ratio(self, t: Array, x: Array, tau: Array, y: Array) -> Array:
        """The same density assembled literally from passage and image kernels."""
        self._check(t, x, tau, y)
        numerator = passage_kernel(self.clock, tau, y, self.s, 0.0)
        denominator = passage_kernel(self.clock, t, x, self.s, 0.0)
        return _out(numerator / denominator * image_kernel(self.clock, t, x, tau, y))

    def _bessel_parameters(self, t, x, tau):
        t, x, tau, _, v, _, e_t, e_tau = self._check(t, x, tau, 1.0)
        mean = x * e_tau / e_t
        scale = np.sqrt(v * e_tau / e_t)
        return mean, scale

    def bessel_transition(self, t: Array, x: Array, tau: Array, y: Array) -> Array:
        """Transition density of the three-dimensional Bessel bridge, written independently as
        (y/m) [g(y - m) - g(y + m)] with g the centered Gaussian density of variance
        v e_tau/e_t and m = x e_tau/e_t."""
        mean, scale = self._bessel_parameters(t, x, tau)
        y = np.asarray(y, dtype=float)
        value = (y / mean) * (_gaussian(y - mean, scale**2) - _gaussian(y + mean, scale**2))
        return _out(value)

    def marginal_cdf(self, t: Array, x: Array, tau: Array, y: Array) -> Array:
        """P(Y_tau <= y | Y_t = x) in closed form."""
        mean, scale = self._bessel_parameters(t, x, tau)
        y = np.asarray(y, dtype=float)
        value = (
            ndtr((y - mean) / scale)
            + ndtr((y + mean) / scale)
            - 1.0
            + scale**2 / mean * (_gaussian(y + mean, scale**2) - _gaussian(y - mean, scale**2))
        )
        return _out(np.clip(value, 0.0, 1.0))

    def bridge_moment(self, t: float, x: float, tau: float, order: int = 1) -> float:
        """E[Y_tau^order | Y_t = x] by adaptive quadrature of the transition density."""
        mean, scale = self._bessel_parameters(t, x, tau)
        upper = float(mean + 40 * scale)
        return integrate_adaptive(
            lambda y: y**order * self.bridge_transition(t, x, tau, y),
            0.0,
            upper,
            tol=1e-12,
            points=[float(mean)],
        )

    def normalization(self, t: float, x: float, tau: float) -> float:
        """Total mass of the transition density, one up to quadrature error."""
        return self.bridge_moment(t, x, tau, order=0)
