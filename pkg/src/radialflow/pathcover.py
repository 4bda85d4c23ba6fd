"""Sequential covers of Brownian paths by balls chained at exit points.

Ball 0 is centred at the path start.  Ball ``i + 1`` is centred at the first
stored sample with ``|B - c_i| >= r``; it opens only if that sample comes
strictly before the horizon.  ``sigma_i`` is the (whole-step) exit duration of
ball ``i``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .noise import BrownianPath, ball_exit_times, fill_normals
from .stats import Proportion, linear_fit, wilson

_CH = 256


@dataclass
class CoverReport:
    radius: float
    horizon: float
    centers: np.ndarray      # (count, dim)
    open_times: np.ndarray
    close_times: np.ndarray  # inf for the ball still open at the horizon
    sigmas: np.ndarray       # exit durations of the balls that closed

    @property
    def count(self) -> int:
        return len(self.centers)


@nb.njit(cache=True)
def _cover_indices(pos, r):
    """Sample indices at which balls open (first entry 0) and the last exit index or -1."""
    m, d = pos.shape
    idx = np.empty(m, dtype=np.int64)
    idx[0] = 0
    k = 1
    c = 0
    last_exit = -1
    r2 = r * r
    for i in range(1, m):
        s = 0.0
        for j in range(d):
            v = pos[i, j] - pos[c, j]
            s += v * v
        if s >= r2:
            last_exit = i
            if i < m - 1:
                idx[k] = i
                k += 1
                c = i
            else:
                break
    return idx[:k], last_exit


def sequential_cover(path: BrownianPath, r: float) -> CoverReport:
    if not r > 0:
        raise ValueError("r must be > 0")
    t = path.times
    idx, last_exit = _cover_indices(np.ascontiguousarray(path.positions), float(r))
    opens = t[idx]
    closes = np.full(len(idx), np.inf)
    closes[:-1] = t[idx[1:]]
    if last_exit == len(t) - 1:
        closes[-1] = t[last_exit]
    finite = np.isfinite(closes)
    return CoverReport(float(r), path.horizon, path.positions[idx].copy(), opens, closes,
                       closes[finite] - opens[finite])


@nb.njit(cache=True)
def _cover_counts(dim, r, steps, dt, seed, first_path, paths):
    counts = np.empty(paths, dtype=np.int64)
    min_sigma = np.empty(paths)
    buf = np.empty((dim, _CH))
    y = np.empty(dim)
    sq = math.sqrt(dt)
    r2 = r * r
    for p in range(paths):
        path = first_path + p
        for c in range(dim):
            y[c] = 0.0
        count = 1
        opened = 0
        ms = np.inf
        k = 0
        while k < steps:
            m = min(_CH, steps - k)
            for c in range(dim):
                fill_normals(buf[c, :m], seed, path, c, k)
            for i in range(m):
                s = 0.0
                for c in range(dim):
                    y[c] += sq * buf[c, i]
                    s += y[c] * y[c]
                if s >= r2:
                    step = k + i + 1
                    sig = (step - opened) * dt
                    if sig < ms:
                        ms = sig
                    if step < steps:
                        count += 1
                        opened = step
                        for c in range(dim):
                            y[c] = 0.0
            k += m
        counts[p] = count
        min_sigma[p] = ms
    return counts, min_sigma


def cover_counts(dim: int, r: float, T: float, dt: float, paths: int, seed: int = 0,
                 first_path: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Cover counts ``N_{r,T}`` of ``dim``-dimensional BM and each path's smallest ``sigma``."""
    if dim < 1 or not r > 0 or not T > 0 or not dt > 0:
        raise ValueError("need dim >= 1 and positive r, T, dt")
    steps = int(round(T / dt))
    return _cover_counts(dim, float(r), steps, float(dt), np.uint64(seed), first_path, paths)


def exit_time_minimum_tail(n: int, m: int, K: float, trials: int, seed: int = 0,
                           dt: float | None = None) -> tuple[Proportion, Proportion]:
    """``P(min_{i<=m} sigma_i < K/n)`` for i.i.d. unit-ball exit times in dimension ``n``.

    Returns the estimate for the minimum and the single-exit estimate pooled
    over the same ``m * trials`` exits, so the union bound
    ``p_min <= m * p_single`` holds exactly on the sample.
    """
    if not 0 < K < 0.125:
        raise ValueError("K must lie in (0, 1/8)")
    if n < 1 or m < 1 or trials < 1:
        raise ValueError("need n, m, trials >= 1")
    t_max = K / n
    dt = dt or t_max / 400
    steps = int(math.ceil(t_max / dt))
    t = ball_exit_times(n, 1.0, np.uint64(seed), 0, m * trials, dt, steps, True)
    early = (t < t_max).reshape(trials, m)
    return wilson(int(early.any(axis=1).sum()), trials), wilson(int(early.sum()), m * trials)


def count_quantile(counts, eps: float) -> float:
    """Empirical ``(1 - eps)``-quantile of cover counts."""
    return float(np.quantile(np.asarray(counts), 1.0 - eps, method="higher"))


@dataclass
class ScalingCell:
    n: int
    r: float
    T: float
    mean: float
    stderr: float
    paths: int
    quantile_90: float


@dataclass
class ScalingTable:
    cells: list[ScalingCell]
    slopes: dict        # n -> fitted slope of log mean count vs log r
    n_coefficients: dict  # r -> fitted slope of mean count vs n

    def to_csv(self, fp) -> None:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["n", "r", "T", "mean_count", "stderr", "paths"])
        for c in self.cells:
            w.writerow([c.n, repr(c.r), repr(c.T), repr(c.mean), repr(c.stderr), c.paths])


def cover_scaling_study(ns, T: float, radii, paths: int, seed: int = 0,
                        steps_per_sigma: float = 100.0) -> ScalingTable:
    """Mean cover counts of the lateral path ``B^perp`` (dimension ``n - 1``).

    Each cell uses ``dt = r^2 / ((n - 1) steps_per_sigma)`` so every cell sees the
    same discretization in diffusive units; cell seeds are ``seed + cell index``.
    """
    cells = []
    for i, (n, r) in enumerate((n, r) for n in ns for r in radii):
        if n < 2:
            raise ValueError("n must be >= 2 (the lateral path has dimension n - 1)")
        dt = r * r / ((n - 1) * steps_per_sigma)
        counts, _ = cover_counts(n - 1, r, T, dt, paths, seed + i)
        cells.append(ScalingCell(int(n), float(r), float(T), float(counts.mean()),
                                 float(counts.std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0,
                                 paths, count_quantile(counts, 0.1)))
    slopes = {}
    for n in ns:
        sub = [c for c in cells if c.n == n]
        if len(sub) > 1:
            slopes[n] = linear_fit(np.log([c.r for c in sub]), np.log([c.mean for c in sub]))[0]
    coefs = {}
    for r in radii:
        sub = [c for c in cells if c.r == r]
        if len(sub) > 1:
            coefs[r] = linear_fit([c.n for c in sub], [c.mean for c in sub])[0]
    return ScalingTable(cells, slopes, coefs)
