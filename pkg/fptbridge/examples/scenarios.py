from typing import Callable, Dict, Tuple

import numpy as np
from scipy import stats

from fptbridge.boundary import MovingBoundary, ou_to_martingale
from fptbridge.clock import VolatilityClock
from fptbridge.utils import DomainError


def constant_scenario(a: float = 1.0) -> Tuple[VolatilityClock, MovingBoundary]:
    """Brownian motion and the level f = a."""
    clock = VolatilityClock.constant()
    return clock, MovingBoundary.constant(a, clock)


def linear_scenario(a: float = 1.0, c: float = 1.0) -> Tuple[VolatilityClock, MovingBoundary]:
    """Brownian motion and the line f(t) = a + c t, beta' = 0."""
    clock = VolatilityClock.constant()
    return clock, MovingBoundary.linear(a, c, clock)


def quadratic_scenario(a: float = 1.0, c2: float = 1.0) -> Tuple[VolatilityClock, MovingBoundary]:
    """Brownian motion and the parabola f(t) = a + c2 t^2, beta' = 2 c2."""
    clock = VolatilityClock.constant()
    return clock, MovingBoundary.quadratic(a, 0.0, c2, clock)


def linear_in_variance_scenario(
    a: float = 1.0, c: float = 0.5, rate: float = -0.5
) -> Tuple[VolatilityClock, MovingBoundary]:
    """Exponential clock h(u) = exp(rate u) and f(t) = a + c H(t), beta' = 0."""
    clock = VolatilityClock.exponential(rate)
    return clock, MovingBoundary.linear_in_variance(a, c, clock)


def ou_scenario(level: float = 2.0, horizon: float = 3.0) -> Tuple[VolatilityClock, MovingBoundary]:
    """Unit OU process dX = -X dt + dB hitting the constant level g = ``level``."""
    return ou_to_martingale([level], horizon=horizon)


SCENARIOS: Dict[str, Callable[[], Tuple[VolatilityClock, MovingBoundary]]] = {
    "constant": constant_scenario,
    "linear": linear_scenario,
    "quadratic": quadratic_scenario,
    "linear_in_variance": linear_in_variance_scenario,
    "ou": ou_scenario,
}


def build_scenario(name: str) -> Tuple[VolatilityClock, MovingBoundary]:
    """Clock and boundary of a shipped scenario with its default parameters."""
    if name not in SCENARIOS:
        raise DomainError(f"Unknown scenario {name}, choose from {list(SCENARIOS)}")
    return SCENARIOS[name]()


def bachelier_levy_density(a: float, c: float, s):
    """Density of the first passage of Brownian motion through a + c t."""
    s = np.asarray(s, dtype=float)
    return a / np.sqrt(2 * np.pi * s**3) * np.exp(-((a + c * s) ** 2) / (2 * s))


def bachelier_levy_cdf(a: float, c: float, t):
    """P(T <= t) for Brownian motion and the line a + c t."""
    t = np.asarray(t, dtype=float)
    root = np.sqrt(t)
    return stats.norm.cdf(-(a + c * t) / root) + np.exp(-2 * a * c) * stats.norm.cdf(
        (c * t - a) / root
    )


def linear_in_variance_density(clock: VolatilityClock, a: float, c: float, s):
    """Density of the first passage through a + c H(t):

    a h^2(s) (2 pi H(s)^3)^(-1/2) exp(-(a + c H(s))^2 / (2 H(s))).

    """
    variance = np.asarray(clock.cumulative_variance(s), dtype=float)
    h2 = np.asarray(clock.h2(s), dtype=float)
    return a * h2 / np.sqrt(2 * np.pi * variance**3) * np.exp(
        -((a + c * variance) ** 2) / (2 * variance)
    )


def level_cdf_closed_form(a: float, variance):
    """Reflection principle: P(T_a <= t) = 2 (1 - Phi(a / sqrt(H(t))))."""
    return 2 * stats.norm.sf(a / np.sqrt(np.asarray(variance, dtype=float)))
