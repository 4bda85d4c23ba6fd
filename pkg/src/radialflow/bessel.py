"""Bessel processes of real dimension and the comparison machinery around them.

Each step is split into the exact solution of the drift ODE
``dD/dt = (nu - 1) / (2 D)``, i.e. ``D <- sqrt(D^2 + (nu - 1) dt)``, followed
by the Gaussian increment.  Absorption at ``floor`` is checked on the grid and
between grid points with the Brownian-bridge crossing probability; steps that
start within ``4 sqrt(dt)`` of the floor are bisected along the bridge of
their own increment until the pieces are fine enough.  For
``nu >= 2`` and ``floor == 0`` the origin is polar, so a grid value below zero
is reflected instead of absorbed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .noise import (AUX_BASE, NoiseStream, ball_exit_times, fill_normals, normal_at,
                    uniform_at)
from .stats import Proportion, wilson

_CH = 1024


@dataclass(frozen=True)
class BesselSpec:
    nu: float
    start: float
    T: float
    dt: float = 1e-3
    floor: float = 1e-3

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be >= 0")
        if not self.start > self.floor >= 0:
            raise ValueError("need start > floor >= 0")
        if self.T <= 0 or self.dt <= 0:
            raise ValueError("T and dt must be > 0")

    @property
    def steps(self) -> int:
        return max(1, int(math.ceil(self.T / self.dt - 1e-9)))


@dataclass
class BesselPath:
    times: np.ndarray
    values: np.ndarray
    hit: bool
    hit_time: float | None
    floor: float


_MAX_DEPTH = 20


@nb.njit(cache=True)
def _leaf(d, h, x, nu, floor, polar, seed, path, ucoord, ustep):
    a = d * d + (nu - 1.0) * h
    if a <= floor * floor:
        return floor, True
    dd = math.sqrt(a)
    d1 = dd + x
    if polar:
        return abs(d1), False
    if d1 <= floor:
        return floor, True
    q = 2.0 * (dd - floor) * (d1 - floor) / h
    if q < 40.0 and uniform_at(seed, path, ucoord, ustep) < math.exp(-q):
        return floor, True
    return d1, False


@nb.njit(cache=True)
def _refined_step(d, dt, w, nu, floor, polar, seed, path, step):
    """One step near the floor, bisected along the Brownian bridge of its increment.

    Pieces are split while ``d - floor < 4 sqrt(piece)``; midpoints use their
    own noise addresses (depth and node in the coordinate), so refinement
    keeps every value a pure function of the path address.
    """
    sh = np.empty(2 * _MAX_DEPTH + 4)
    sw = np.empty(2 * _MAX_DEPTH + 4)
    sd = np.empty(2 * _MAX_DEPTH + 4, dtype=np.int64)
    sn = np.empty(2 * _MAX_DEPTH + 4, dtype=np.int64)
    top = 1
    sh[0], sw[0], sd[0], sn[0] = dt, w, 0, 0
    while top > 0:
        top -= 1
        h, x, dep, node = sh[top], sw[top], sd[top], sn[top]
        if dep < _MAX_DEPTH and d - floor < 4.0 * math.sqrt(h):
            z = normal_at(seed, path, ((dep + 2) << 20) | node, step)
            xa = 0.5 * x + 0.5 * math.sqrt(h) * z
            sh[top], sw[top], sd[top], sn[top] = 0.5 * h, x - xa, dep + 1, 2 * node + 1
            sh[top + 1], sw[top + 1], sd[top + 1], sn[top + 1] = 0.5 * h, xa, dep + 1, 2 * node
            top += 2
            continue
        if dep == 0:
            d, absorbed = _leaf(d, h, x, nu, floor, polar, seed, path, AUX_BASE, step)
        else:
            d, absorbed = _leaf(d, h, x, nu, floor, polar, seed, path,
                                (((dep + 2) << 20) | node) + (32 << 20), step)
        if absorbed:
            return d, True
    return d, False


@nb.njit(cache=True)
def _bessel_run(nu, start, floor, steps, dt, seed, path, values):
    """Returns the absorption step (or -1); fills ``values`` if it is non-empty."""
    rec = values.shape[0] > 0
    polar = nu >= 2.0 and floor == 0.0
    sq = math.sqrt(dt)
    buf = np.empty(_CH)
    d = start
    if rec:
        values[0] = d
    k = 0
    while k < steps:
        m = min(_CH, steps - k)
        fill_normals(buf[:m], seed, path, 0, k)
        for i in range(m):
            if d - floor < 4.0 * sq:
                d, absorbed = _refined_step(d, dt, sq * buf[i], nu, floor, polar, seed, path, k + i)
            else:
                d, absorbed = _leaf(d, dt, sq * buf[i], nu, floor, polar, seed, path, AUX_BASE, k + i)
            if rec:
                values[k + i + 1] = d
            if absorbed:
                return k + i + 1
        k += m
    return -1


@nb.njit(cache=True)
def _bessel_batch(nu, start, floor, steps, dt, seed, first_path, paths):
    out = np.empty(paths, dtype=np.int64)
    empty = np.empty(0)
    for p in range(paths):
        out[p] = _bessel_run(nu, start, floor, steps, dt, seed, first_path + p, empty)
    return out


@nb.njit(cache=True)
def _bessel_values_at_end(nu, start, floor, steps, dt, seed, first_path, paths):
    out = np.empty(paths)
    vals = np.empty(steps + 1)
    for p in range(paths):
        h = _bessel_run(nu, start, floor, steps, dt, seed, first_path + p, vals)
        out[p] = floor if h >= 0 else vals[steps]
    return out


def simulate_bessel(spec: BesselSpec, stream: NoiseStream) -> BesselPath:
    """One path of ``dD = (nu-1)/(2D) dt + dW`` absorbed at ``spec.floor``."""
    vals = np.full(spec.steps + 1, np.nan)
    h = _bessel_run(spec.nu, spec.start, spec.floor, spec.steps, spec.dt,
                    np.uint64(stream.seed), np.uint64(stream.path_index), vals)
    last = spec.steps if h < 0 else h
    times = np.arange(last + 1) * spec.dt
    return BesselPath(times, vals[: last + 1], h >= 0, h * spec.dt if h >= 0 else None, spec.floor)


def bessel_hit_frequency(spec: BesselSpec, paths: int, seed: int = 0,
                         first_path: int = 0) -> Proportion:
    hits = _bessel_batch(spec.nu, spec.start, spec.floor, spec.steps, spec.dt,
                         np.uint64(seed), first_path, paths)
    return wilson(int((hits >= 0).sum()), paths)


def bessel_marginal(spec: BesselSpec, paths: int, seed: int = 0) -> np.ndarray:
    """Values of ``D_T`` over ``paths`` paths (absorbed paths report the floor)."""
    return _bessel_values_at_end(spec.nu, spec.start, spec.floor, spec.steps, spec.dt,
                                 np.uint64(seed), 0, paths)


def scale_hit_probability(nu: float, x: float, a: float, b: float) -> float:
    """P(hit a before b | start x) from the scale function ``r^(2-nu)`` (``log r`` at nu=2)."""
    if not 0 < a <= x <= b or a == b:
        raise ValueError("need 0 < a <= x <= b with a < b")
    if nu == 2:
        s = math.log
    else:
        e = 2.0 - nu
        s = lambda r: r ** e  # noqa: E731
    return (s(x) - s(b)) / (s(a) - s(b))


def harmonic_exit_prob(x: float, n: int) -> float:
    """P(D exits [1/4, 1/2] at 1/4 | D_0 = x) for ``dD = 2(n-1) dt + dW``.

    The generator ``2(n-1) f' + f''/2`` has scale function ``exp(-4(n-1)x)``.
    """
    if not 0.25 <= x <= 0.5:
        raise ValueError("x must lie in [1/4, 1/2]")
    if n < 2:
        raise ValueError("n must be >= 2")
    k = 4.0 * (n - 1)
    top = math.exp(-k * x) - math.exp(-k / 2)
    return top / (math.exp(-k / 4) - math.exp(-k / 2))


# ---------------------------------------------------------------------------
# exit of n-dimensional BM from the ball of radius 1/2

def exit_times(n: int, trials: int, radius: float = 0.5, dt: float | None = None,
               seed: int = 0, horizon: float | None = None) -> np.ndarray:
    dt = dt or 1e-3 * radius * radius / n
    max_steps = int(math.ceil((horizon if horizon is not None else 200 * radius * radius / n) / dt))
    return ball_exit_times(n, radius, np.uint64(seed), 0, trials, dt, max(max_steps, 1), True)


def exit_time_tail(n: int, trials: int, x: float, dt: float | None = None,
                   seed: int = 0) -> Proportion:
    """P(sigma > x) for sigma the exit time of n-dimensional BM from radius 1/2."""
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0:
        return wilson(trials, trials)
    dt = dt or min(1e-3 / (4 * n), x / 200)
    t = exit_times(n, trials, 0.5, dt, seed, horizon=x + dt)
    return wilson(int((t > x).sum()), trials)


def estimate_c1(n: int, trials: int, dt: float | None = None, seed: int = 0,
                level: float = 2 / 3) -> float:
    """Largest ``C`` with empirical ``P(sigma > C/n) >= level``."""
    t = exit_times(n, trials, 0.5, dt, seed)
    return float(n * np.quantile(t, 1 - level, method="lower"))


# ---------------------------------------------------------------------------
# comparison chain D1 <= D2, D3

@dataclass
class ComparisonChain:
    n: int
    dt: float
    sigma0: np.ndarray
    sigma: np.ndarray
    s: np.ndarray          # columns sigma_1 .. sigma_5, measured from sigma_0
    d3_low: np.ndarray     # D3 left [1/4, 1/2] through 1/4
    dominated: np.ndarray  # D1 <= D2 at every step
    max_violation: np.ndarray

    @property
    def paths(self) -> int:
        return len(self.sigma)

    def ordering_holds(self, slack: float = 0.0) -> np.ndarray:
        """Per path: sigma >= sigma_1 >= sigma_2 >= sigma_3 (within ``slack``)."""
        s1, s2, s3 = self.s[:, 0], self.s[:, 1], self.s[:, 2]
        return (self.sigma + slack >= s1) & (s1 + slack >= s2) & (s2 + slack >= s3)


@nb.njit(cache=True, inline="always")
def _flow_bessel(x, nu1, dt):
    return math.sqrt(x * x + nu1 * dt)


@nb.njit(cache=True, inline="always")
def _flow_f(x, n1, dt):
    # dx/dt = n1/(2x) below 1/4, 2 n1 above; exact and monotone in x
    if x >= 0.25:
        return x + 2.0 * n1 * dt
    t_star = (0.0625 - x * x) / n1
    if dt <= t_star:
        return math.sqrt(x * x + n1 * dt)
    return 0.25 + 2.0 * n1 * (dt - t_star)


@nb.njit(cache=True)
def _chain_kernel(n, dt, seed, first_path, paths, max_steps):
    n1 = n - 1.0
    sq = math.sqrt(dt)
    res = np.full((paths, 7), -1.0)
    low = np.zeros(paths, dtype=np.bool_)
    dom = np.ones(paths, dtype=np.bool_)
    viol = np.zeros(paths)
    buf = np.empty(_CH)
    for p in range(paths):
        path = first_path + p
        d0 = 0.0
        d1 = d2 = d3 = 0.375
        phase0 = True
        k0 = -1
        s = np.full(5, -1)
        k = 0
        finished = False
        while k < max_steps and not finished:
            m = min(_CH, max_steps - k)
            fill_normals(buf[:m], seed, path, 0, k)
            for i in range(m):
                z = sq * buf[i]
                step = k + i + 1
                if phase0:
                    d0 = max(_flow_bessel(d0, n1, dt) + z, 0.0)
                    if d0 >= 0.375:
                        phase0 = False
                        k0 = step
                    continue
                d1 = max(_flow_bessel(d1, n1, dt) + z, 0.0)
                d2 = max(_flow_f(d2, n1, dt) + z, 0.0)
                d3 = d3 + 2.0 * n1 * dt + z
                if d1 > d2:
                    dom[p] = False
                    viol[p] = max(viol[p], d1 - d2)
                t = step - k0
                if s[0] < 0 and d1 >= 0.5:
                    s[0] = t
                if s[1] < 0 and d2 >= 0.5:
                    s[1] = t
                if s[2] < 0 and (d2 >= 0.5 or d2 <= 0.25):
                    s[2] = t
                if s[3] < 0 and (d3 >= 0.5 or d3 <= 0.25):
                    s[3] = t
                    low[p] = d3 <= 0.25
                if s[4] < 0 and d3 >= 0.5:
                    s[4] = t
                if s[0] >= 0 and s[1] >= 0 and s[2] >= 0 and s[3] >= 0 and s[4] >= 0:
                    finished = True
                    break
            k += m
        res[p, 0] = k0 * dt if k0 >= 0 else np.inf
        for j in range(5):
            res[p, 1 + j] = s[j] * dt if s[j] >= 0 else np.inf
        res[p, 6] = res[p, 0] + res[p, 1]
    return res, low, dom, viol


def run_comparison_chain(n: int, stream: NoiseStream, paths: int = 1,
                         dt: float = 1e-5, horizon: float = 50.0) -> ComparisonChain:
    """Simulate sigma_0, then D1 (Bessel), D2 (drift f) and D3 (drift 2(n-1)) from 3/8.

    All processes share the noise of ``stream`` (paths ``path_index ..
    path_index + paths - 1``); each drift is applied through its exact,
    order-preserving ODE flow so that ``D1 <= D2`` holds step by step.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    res, low, dom, viol = _chain_kernel(float(n), dt, np.uint64(stream.seed), stream.path_index,
                                        paths, int(horizon / dt))
    return ComparisonChain(n, dt, res[:, 0], res[:, 6], res[:, 1:6], low, dom, viol)


@nb.njit(cache=True)
def _d3_exit_kernel(n, start, dt, seed, first_path, paths, max_steps):
    mu = 2.0 * (n - 1.0)
    sq = math.sqrt(dt)
    buf = np.empty(_CH)
    low = 0
    for p in range(paths):
        path = first_path + p
        x = start
        k = 0
        done = False
        while k < max_steps and not done:
            m = min(_CH, max_steps - k)
            fill_normals(buf[:m], seed, path, 0, k)
            for i in range(m):
                x0 = x
                x = x + mu * dt + sq * buf[i]
                if x <= 0.25:
                    low += 1
                    done = True
                    break
                if x >= 0.5:
                    done = True
                    break
                # bridge crossings of either level between grid points
                u = uniform_at(seed, path, AUX_BASE, k + i)
                pl = math.exp(-2.0 * (x0 - 0.25) * (x - 0.25) / dt)
                ph = math.exp(-2.0 * (0.5 - x0) * (0.5 - x) / dt)
                if u < pl:
                    low += 1
                    done = True
                    break
                if u < pl + ph:
                    done = True
                    break
            k += m
    return low


def d3_exit_low_frequency(n: int, paths: int, start: float = 0.375, dt: float = 1e-5,
                          seed: int = 0) -> Proportion:
    """Monte Carlo P(D3 leaves [1/4, 1/2] through 1/4) with bridge-corrected exits."""
    low = _d3_exit_kernel(float(n), start, dt, np.uint64(seed), 0, paths, int(100 / dt))
    return wilson(int(low), paths)
