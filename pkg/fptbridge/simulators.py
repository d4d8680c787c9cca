import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as P
from tqdm import tqdm

from fptbridge.boundary import MovingBoundary
from fptbridge.clock import VolatilityClock
from fptbridge.utils import DomainError, StepSizeError

logging.basicConfig(level=logging.INFO)

BLOCK_SIZE = 4096
MAX_REJECTIONS = 100


@dataclass
class McEstimate:
    """Monte Carlo estimate of an expectation.

    Attributes:
        mean (float): sample mean
        stderr (float): standard error of the mean
        n_paths (int): number of paths
        seed (int): seed of the streams
        extras (dict): further statistics and settings

    """

    mean: float
    stderr: float
    n_paths: int
    seed: int
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "seed": self.seed,
            **self.extras,
        }


@dataclass
class FptSample:
    """Simulated first passage times.

    Attributes:
        times (np.ndarray): sorted passage times of the paths that crossed, in (0, horizon]
        n_paths (int): number of simulated paths, crossed or censored
        horizon (float): end of the simulation

    """

    times: np.ndarray
    n_paths: int
    horizon: float

    @property
    def n_crossed(self) -> int:
        return len(self.times)

    @property
    def n_censored(self) -> int:
        """Paths that did not cross before the horizon."""
        return self.n_paths - len(self.times)

    def empirical_cdf(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Fraction of all paths that crossed by t."""
        value = np.searchsorted(self.times, t, side="right") / self.n_paths
        return value if np.ndim(value) else float(value)

    def binomial_stderr(self, t: float) -> float:
        p = self.empirical_cdf(t)
        return float(np.sqrt(p * (1 - p) / self.n_paths))


@dataclass
class BridgeEnsemble:
    """Sampled paths of the conditioned process on a time grid.

    Attributes:
        times (np.ndarray): time grid from 0 to s
        paths (np.ndarray): samples, one row per path, one column per grid time
        a (float): start level
        s (float): terminal time

    """

    times: np.ndarray
    paths: np.ndarray
    a: float
    s: float

    def marginal(self, t: float) -> np.ndarray:
        """Samples at the grid time t."""
        index = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if len(index) == 0:
            raise DomainError(f"t={t} is not a grid time of the ensemble")
        return self.paths[:, index[0]]


def _blocks(n_paths: int, seed: int):
    """Sizes and generators of the fixed-size blocks of paths."""
    if n_paths < 1:
        raise DomainError(f"Need at least one path, got {n_paths}")
    n_blocks = -(-n_paths // BLOCK_SIZE)
    sizes = [BLOCK_SIZE] * (n_blocks - 1) + [n_paths - BLOCK_SIZE * (n_blocks - 1)]
    streams = np.random.SeedSequence(seed).spawn(n_blocks)
    return sizes, streams


def _run_blocks(block_fn: Callable, n_paths: int, seed: int, threads: int, desc: str, progress):
    """Run ``block_fn(rng, size)`` on every block and return the results in block order."""
    sizes, streams = _blocks(n_paths, seed)
    logging.debug(f"{desc}: {len(sizes)} blocks of at most {BLOCK_SIZE} paths, {threads} threads")

    def work(k):
        return block_fn(np.random.default_rng(streams[k]), sizes[k])

    with ThreadPoolExecutor(max_workers=max(int(threads), 1)) as executor:
        return list(
            tqdm(
                executor.map(work, range(len(sizes))),
                total=len(sizes),
                desc=desc,
                disable=not progress,
            )
        )


def _crossings(t0, dt, gap, gap_next, variance, uniforms, alive, bridge_correction):
    """Paths crossing within a step and their linearly interpolated crossing times."""
    with np.errstate(divide="ignore", invalid="ignore"):
        crossed = alive & (gap_next <= 0)
        times = np.where(crossed, t0 + dt * gap / (gap - gap_next), np.nan)
        if bridge_correction:
            inside = alive & ~crossed
            p = np.exp(-2 * gap * gap_next / variance)
            touched = inside & (uniforms < p)
            times = np.where(touched, t0 + dt * gap / (gap + gap_next), times)
            crossed = crossed | touched
    return crossed, times


def simulate_martingale_fpt(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    n_paths: int,
    n_steps: int,
    horizon: float,
    seed: int,
    threads: int = 1,
    bridge_correction: bool = True,
    progress: bool = False,
) -> FptSample:
    """Simulate passage times of M through f with exact Gaussian increments.

    Increments are Normal(0, H(t_{i+1}) - H(t_i)). A path crosses within a step when the gap
    g = f - M changes sign or, with ``bridge_correction``, with the Brownian bridge probability
    exp(-2 g_i g_{i+1} / (H_{i+1} - H_i)) of touching the linearized boundary. The crossing
    time is interpolated linearly. Paths are generated in blocks of 4096 with one stream per
    block, so the sample does not depend on ``threads``.

    Args:
        boundary (MovingBoundary): the boundary, starting above 0
        clock (VolatilityClock): the clock
        n_paths (int): number of paths
        n_steps (int): number of time steps, at least 2
        horizon (float): end of the simulation
        seed (int): seed of the streams
        threads (int, optional (default=1)): worker threads
        bridge_correction (bool, optional (default=True)): use the crossing probability
        progress (bool, optional (default=False)): show a progress bar

    Returns:
        FptSample: the passage times

    """
    if n_steps < 2:
        raise DomainError(f"Need at least 2 steps, got {n_steps}")
    if not horizon > 0:
        raise DomainError(f"The horizon must be positive, got {horizon}")
    if not boundary.f(0.0) > 0:
        raise DomainError("The boundary must start above the martingale")
    grid = np.linspace(0.0, horizon, n_steps + 1)
    increments = np.diff(np.asarray(clock.cumulative_variance(grid)))
    f = np.asarray(boundary.f(grid))
    dt = grid[1] - grid[0]

    def block(rng, size):
        m = np.zeros(size)
        alive = np.ones(size, dtype=bool)
        hits = np.full(size, np.nan)
        for i in range(n_steps):
            normals = rng.standard_normal(size)
            uniforms = rng.random(size)
            m_next = m + np.sqrt(increments[i]) * normals
            crossed, times = _crossings(
                grid[i],
                dt,
                f[i] - m,
                f[i + 1] - m_next,
                increments[i],
                uniforms,
                alive,
                bridge_correction,
            )
            hits[crossed] = times[crossed]
            alive &= ~crossed
            m = m_next
        return hits[~alive]

    results = _run_blocks(block, n_paths, seed, threads, "fpt paths", progress)
    times = np.sort(np.concatenate(results))
    return FptSample(np.clip(times, np.nextafter(0, 1), horizon), n_paths, horizon)


def simulate_ou_fpt(
    g: Union[Callable, Sequence[float]],
    n_paths: int,
    dt: float,
    horizon: float,
    seed: int,
    rate: float = 1.0,
    sigma: float = 1.0,
    scheme: str = "euler",
    bridge_correction: bool = True,
    threads: int = 1,
    progress: bool = False,
) -> FptSample:
    """Simulate passage times of dX = -rate X dt + sigma dB, X_0 = 0, through g directly.

    Args:
        g (callable or list): the boundary, or its polynomial coefficients in ascending powers
        n_paths (int): number of paths
        dt (float): time step
        horizon (float): end of the simulation
        seed (int): seed of the streams
        rate (float, optional (default=1.0)): mean-reversion rate
        sigma (float, optional (default=1.0)): noise scale
        scheme (str, optional (default="euler")): "euler" (Euler-Maruyama) or "exact" (exact
            Gaussian transition)
        bridge_correction (bool, optional (default=True)): crossing probability within steps,
            with the local variance sigma^2 dt
        threads (int, optional (default=1)): worker threads
        progress (bool, optional (default=False)): show a progress bar

    """
    if scheme not in ("euler", "exact"):
        raise DomainError(f"Unknown scheme {scheme}, choose from euler, exact")
    if not (dt > 0 and horizon > 0):
        raise DomainError("dt and horizon must be positive")
    n_steps = max(int(round(horizon / dt)), 2)
    grid = np.linspace(0.0, horizon, n_steps + 1)
    step = grid[1] - grid[0]
    if callable(g):
        level = np.vectorize(lambda t: float(g(t)), otypes=[float])(grid)
    else:
        level = P.polyval(grid, np.asarray(g, dtype=float))
    if not level[0] > 0:
        raise DomainError(f"The OU boundary must start above 0, got {level[0]}")
    if scheme == "euler":
        decay, scale = 1.0 - rate * step, sigma * np.sqrt(step)
    else:
        decay = np.exp(-rate * step)
        if rate:
            scale = sigma * np.sqrt(-np.expm1(-2 * rate * step) / (2 * rate))
        else:
            scale = sigma * np.sqrt(step)
    variance = sigma**2 * step

    def block(rng, size):
        x = np.zeros(size)
        alive = np.ones(size, dtype=bool)
        hits = np.full(size, np.nan)
        for i in range(n_steps):
            normals = rng.standard_normal(size)
            uniforms = rng.random(size)
            x_next = decay * x + scale * normals
            crossed, times = _crossings(
                grid[i],
                step,
                level[i] - x,
                level[i + 1] - x_next,
                variance,
                uniforms,
                alive,
                bridge_correction,
            )
            hits[crossed] = times[crossed]
            alive &= ~crossed
            x = x_next
        return hits[~alive]

    results = _run_blocks(block, n_paths, seed, threads, "ou paths", progress)
    times = np.sort(np.concatenate(results))
    return FptSample(np.clip(times, np.nextafter(0, 1), horizon), n_paths, horizon)


def _bridge_grid(s: float, n_steps: int) -> np.ndarray:
    return np.linspace(0.0, s, n_steps + 1)


def _exact_bridge_steps(rng, size, theta, a) -> Iterator[np.ndarray]:
    """Samples of the Bessel bridge from a to 0 at the clock values ``theta``, one step at a
    time: the norm of (a (1 - theta/Theta), 0, 0) plus a 3-d Brownian bridge pinned at 0."""
    total = theta[-1]
    pinned = np.zeros((3, size))
    yield np.full(size, float(a))
    for i in range(len(theta) - 2):
        remaining = total - theta[i]
        remaining_next = total - theta[i + 1]
        step = theta[i + 1] - theta[i]
        normals = rng.standard_normal((3, size))
        pinned = pinned * (remaining_next / remaining) + np.sqrt(
            step * remaining_next / remaining
        ) * normals
        shifted = pinned.copy()
        shifted[0] += a * remaining_next / total
        yield np.sqrt(np.sum(shifted**2, axis=0))
    yield np.zeros(size)


def simulate_bridge_exact(
    clock: VolatilityClock,
    a: float,
    s: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    threads: int = 1,
    progress: bool = False,
) -> BridgeEnsemble:
    """Exact samples of the conditioned process Y on an equidistant grid of [0, s].

    Under the clock theta = H(t), Y is a three-dimensional Bessel bridge from a to 0 on
    [0, H(s)], the norm of a 3-d Brownian bridge with mean path (a, 0, 0) (1 - theta/H(s)).
    The paths start at a and end at 0 exactly.

    Raises:
        DomainError: if a <= 0, s <= 0 or n_steps < 1

    """
    if not (a > 0 and s > 0):
        raise DomainError(f"The bridge needs a > 0 and s > 0, got a={a}, s={s}")
    if n_steps < 1:
        raise DomainError(f"Need at least one step, got {n_steps}")
    times = _bridge_grid(s, n_steps)
    theta = np.asarray(clock.cumulative_variance(times))

    def block(rng, size):
        return np.stack(list(_exact_bridge_steps(rng, size, theta, a)), axis=1)

    results = _run_blocks(block, n_paths, seed, threads, "exact bridge", progress)
    return BridgeEnsemble(times, np.concatenate(results), float(a), float(s))


def _euler_bridge_grid(s: float, n_steps: int) -> np.ndarray:
    """Uniform steps on [0, s/2], then distances to s shrinking geometrically to s/(2m)."""
    uniform = n_steps // 2
    m = n_steps - uniform
    head = np.linspace(0.0, 0.5 * s, uniform + 1)
    if m <= 1:
        return np.concatenate([head, [s]])
    ratio = (1.0 / m) ** (1.0 / (m - 1))
    tail = s - 0.5 * s * ratio ** np.arange(1, m)
    return np.concatenate([head, tail, [s]])


def simulate_bridge_euler(
    clock: VolatilityClock,
    a: float,
    s: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    threads: int = 1,
    progress: bool = False,
) -> BridgeEnsemble:
    """Euler-Maruyama samples of dY = h dW + h^2 (1/Y - Y/(H(s) - H(t))) dt.

    Steps are taken in the clock variable. Proposals Y <= 0 are redrawn, at most 100 times.
    The grid is uniform on [0, s/2] and refined geometrically towards s; the terminal value is
    set to 0.

    Raises:
        StepSizeError: if a proposal stays non-positive after 100 redraws

    """
    if not (a > 0 and s > 0):
        raise DomainError(f"The bridge needs a > 0 and s > 0, got a={a}, s={s}")
    if n_steps < 2:
        raise DomainError(f"Need at least 2 steps, got {n_steps}")
    times = _euler_bridge_grid(s, n_steps)
    theta = np.asarray(clock.cumulative_variance(times))
    total = theta[-1]

    def block(rng, size):
        y = np.full(size, float(a))
        paths = [y]
        for i in range(len(times) - 2):
            step = theta[i + 1] - theta[i]
            drift = (1.0 / y - y / (total - theta[i])) * step
            proposal = y + drift + np.sqrt(step) * rng.standard_normal(size)
            for _ in range(MAX_REJECTIONS):
                rejected = proposal <= 0
                if not np.any(rejected):
                    break
                redraw = rng.standard_normal(int(rejected.sum()))
                proposal[rejected] = y[rejected] + drift[rejected] + np.sqrt(step) * redraw
            else:
                if np.any(proposal <= 0):
                    raise StepSizeError(
                        f"Euler bridge proposals stay non-positive at t={times[i + 1]}"
                    )
            y = proposal
            paths.append(y)
        paths.append(np.zeros(size))
        return np.stack(paths, axis=1)

    results = _run_blocks(block, n_paths, seed, threads, "euler bridge", progress)
    return BridgeEnsemble(times, np.concatenate(results), float(a), float(s))


def mc_bridge_expectation(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    a: float,
    s: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    threads: int = 1,
    progress: bool = False,
) -> McEstimate:
    """Monte Carlo estimate of E[exp(-int_0^s beta'(u) Y_u du)] along exact bridge paths.

    The time integral is the trapezoidal rule on an equidistant grid of n_steps steps; paths are
    not stored.

    """
    if not (a > 0 and s > 0):
        raise DomainError(f"The bridge needs a > 0 and s > 0, got a={a}, s={s}")
    if n_steps < 1:
        raise DomainError(f"Need at least one step, got {n_steps}")
    times = _bridge_grid(s, n_steps)
    theta = np.asarray(clock.cumulative_variance(times))
    weights = np.full(len(times), times[1] - times[0])
    weights[0] *= 0.5
    weights[-1] *= 0.5
    potential = np.asarray(boundary.beta_prime(times)) * weights

    def block(rng, size):
        integral = np.zeros(size)
        for i, y in enumerate(_exact_bridge_steps(rng, size, theta, a)):
            integral += potential[i] * y
        return np.exp(-integral)

    values = np.concatenate(_run_blocks(block, n_paths, seed, threads, "bridge mc", progress))
    stderr = float(np.std(values, ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    return McEstimate(
        float(np.mean(values)),
        stderr,
        int(n_paths),
        int(seed),
        {"n_steps": int(n_steps), "sampler": "exact"},
    )


def ks_statistic(sample: FptSample, analytic_cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sup distance between the empirical and an analytic first passage distribution on
    [0, horizon].

    The empirical distribution counts crossed paths over all paths, so censored paths keep it
    below one. The supremum is taken over both sides of every jump and at the horizon.

    Args:
        sample (FptSample): simulated passage times
        analytic_cdf (callable): vectorized distribution function

    Raises:
        DomainError: if the sample holds no paths

    """
    if sample.n_paths < 1:
        raise DomainError("The sample holds no paths")
    times = np.asarray(sample.times, dtype=float)
    n = sample.n_paths
    analytic_at_horizon = float(np.asarray(analytic_cdf(np.array([sample.horizon])))[0])
    distance = abs(len(times) / n - analytic_at_horizon)
    if len(times):
        analytic = np.asarray(analytic_cdf(times), dtype=float)
        above = np.arange(1, len(times) + 1) / n
        below = np.arange(len(times)) / n
        distance = max(distance, np.max(np.abs(above - analytic)), np.max(np.abs(below - analytic)))
    return float(distance)


def crossing_bias(
    boundary: MovingBoundary,
    clock: VolatilityClock,
    n_paths: int,
    n_steps: int,
    horizon: float,
    seed: int,
    threads: int = 1,
) -> List[float]:
    """P(T <= horizon) without and with the bridge correction, on the same streams."""
    return [
        simulate_martingale_fpt(
            boundary, clock, n_paths, n_steps, horizon, seed, threads, correction
        ).empirical_cdf(horizon)
        for correction in (False, True)
    ]
