"""Occupation times of balls, their tails, and the Ciesielski-Taylor check.

Discrete occupation is a left-endpoint sum ``sum_i dt_i 1{|B_{t_i} - c| <= r}``
over the stored samples.  Infinite-horizon totals (transient dimensions) use
the exact return-probability restart in :func:`radialflow.noise.total_occupation`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .noise import BrownianPath, NoiseStream, ball_exit_times, brownian_path, total_occupation
from .stats import Proportion, ks_statistic, linear_fit, survival, wilson


def _dists(path: BrownianPath, center) -> np.ndarray:
    c = np.asarray(center, float).reshape(-1)
    if c.size != path.dim:
        raise ValueError(f"center has {c.size} coordinates, path has {path.dim}")
    return np.sqrt(((path.positions[:-1] - c) ** 2).sum(axis=1))


def occupation_steps(path: BrownianPath, center, r: float) -> int:
    """Number of left endpoints inside the closed ball."""
    if not r > 0:
        raise ValueError("r must be > 0")
    return int(np.count_nonzero(_dists(path, center) <= r))


def occupation_time(path: BrownianPath, center, r: float) -> float:
    if not r > 0:
        raise ValueError("r must be > 0")
    inside = _dists(path, center) <= r
    return float(np.sum(np.diff(path.times)[inside]))


@dataclass
class OccupationHistogram:
    center: np.ndarray
    edges: np.ndarray        # 0 < e_0 < e_1 < ... ; bin j is (e_{j-1}, e_j], bin 0 is [0, e_0]
    horizon: float
    steps: np.ndarray        # left endpoints per bin; last entry counts points beyond e_{-1}
    times: np.ndarray

    @property
    def total(self) -> float:
        return float(self.times[:-1].sum())


def annulus_edges(k_max: int) -> np.ndarray:
    """Outer radii ``2 e^k`` for ``k = 0..k_max``: the ball ``2B_1`` and the annuli ``A^k``."""
    return 2.0 * np.exp(np.arange(k_max + 1, dtype=float))


def annulus_occupations(path: BrownianPath, center, edges) -> OccupationHistogram:
    """Occupation of ``[0, e_0]`` and of the shells ``(e_{j-1}, e_j]``, plus the overflow.

    Per-bin step counts partition the left endpoints, so additivity over bins
    is exact in steps.
    """
    edges = np.asarray(edges, float)
    if edges.ndim != 1 or edges.size < 1 or edges[0] <= 0 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be positive and increasing")
    d = _dists(path, center)
    idx = np.searchsorted(edges, d, side="left")
    dts = np.diff(path.times)
    steps = np.bincount(idx, minlength=edges.size + 1)
    times = np.bincount(idx, weights=dts, minlength=edges.size + 1)
    return OccupationHistogram(np.asarray(center, float), edges, path.horizon, steps, times)


# tails -----------------------------------------------------------------------

@dataclass
class TailCurve:
    n: int
    r: float
    dt: float
    trials: int
    s: np.ndarray
    exceedances: np.ndarray
    intervals: list[Proportion]
    in_domain: np.ndarray    # s > 8/n
    rate: float              # fitted decay rate of log P(L > s r^2) in s
    fit_points: int
    capped: int
    samples: np.ndarray      # L / r^2

    def to_csv(self, fp) -> None:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["n", "r", "s", "exceedances", "trials", "p", "lo", "hi", "s_gt_8_over_n"])
        for s, e, ci, dom in zip(self.s, self.exceedances, self.intervals, self.in_domain):
            w.writerow([self.n, repr(self.r), repr(float(s)), int(e), self.trials,
                        repr(ci.p), repr(ci.lo), repr(ci.hi), int(dom)])


def lateral_total_occupation(n: int, r: float, trials: int, seed: int = 0,
                             dt: float | None = None, r_out_factor: float = 1.5,
                             horizon: float | None = None, first_path: int = 0):
    """Total occupation of ``B_r(0)`` by ``(n - 1)``-dimensional BM from 0, and capped flags."""
    d = n - 1
    if d < 3:
        raise ValueError("needs a transient lateral dimension (n >= 4)")
    dt = dt or 1e-3 * r * r / (n - 3)
    horizon = horizon or 400.0 * r * r / (n - 3)
    steps = int(math.ceil(horizon / dt))
    return total_occupation(d, float(r), r_out_factor * r, np.uint64(seed), first_path,
                            trials, dt, steps)


def occupation_tail(n: int, r: float, s_grid, trials: int, seed: int = 0,
                    dt: float | None = None, min_exceedances: int = 50) -> TailCurve:
    """``P(L^{(n-1)}(B_r(0)) > s r^2)`` over ``s_grid`` with a fitted exponential rate.

    ``s_grid=None`` picks 12 points between the 0.5 and the ``1 - 50/trials``
    empirical quantiles.  Points with ``s <= 8/n`` are kept but flagged.
    The rate is minus the least-squares slope of log-survival on points with at
    least ``min_exceedances`` exceedances.
    """
    if n < 4:
        raise ValueError("n must be >= 4")
    if not r > 0:
        raise ValueError("r must be > 0")
    dt = dt or 1e-3 * r * r / (n - 3)
    L, capped = lateral_total_occupation(n, r, trials, seed, dt)
    x = L / (r * r)
    if s_grid is None:
        hi_q = max(0.5, 1.0 - min_exceedances / trials)
        s_grid = np.linspace(np.quantile(x, 0.5), np.quantile(x, hi_q), 12)
    s = np.asarray(s_grid, float)
    exc = survival(x, s)
    cis = [wilson(int(e), trials) for e in exc]
    ok = exc >= min_exceedances
    rate = float("nan")
    if ok.sum() >= 2:
        rate = -linear_fit(s[ok], np.log(exc[ok] / trials))[0]
    return TailCurve(n, float(r), float(dt), trials, s, exc, cis, s > 8.0 / n, rate,
                     int(ok.sum()), int(capped.sum()), x)


def r_collapse_ks(n: int, trials: int, radii=(1.0, 2.0), seed: int = 0,
                  dt_unit: float | None = None) -> float:
    """KS distance between samples of ``L/r^2`` at two radii (independent seeds)."""
    xs = []
    for i, r in enumerate(radii):
        dt = (dt_unit or 1e-3 / (n - 3)) * r * r
        L, _ = lateral_total_occupation(n, r, trials, seed + i, dt)
        xs.append(L / (r * r))
    return ks_statistic(xs[0], xs[1])


# Ciesielski-Taylor -----------------------------------------------------------

@dataclass
class CTSummary:
    n: int
    samples: int
    dt: float
    ks: float
    mean_tau: float
    mean_L: float
    tau_unfinished: int
    L_capped: int

    def to_csv(self, fp, header: bool = True) -> None:
        w = csv.writer(fp, lineterminator="\n")
        if header:
            w.writerow(["n", "samples", "dt", "ks", "mean_tau", "mean_L",
                        "tau_unfinished", "L_capped"])
        w.writerow([self.n, self.samples, repr(self.dt), repr(self.ks), repr(self.mean_tau),
                    repr(self.mean_L), self.tau_unfinished, self.L_capped])


def ct_identity_check(n: int, samples: int, dt: float = 1e-4, seed: int = 0,
                      r_out: float = 1.5, horizon: float | None = None,
                      first_path: int = 0):
    """Exit times ``tau_n`` of the unit ball vs total unit-ball occupation ``L_{n+2}``.

    Both start at the origin.  ``tau_n`` uses the bridge-corrected exit test;
    ``L_{n+2}`` uses the exact restart at ``r_out``.  Returns the summary and
    both samples.  Unfinished exits and capped occupations are counted, not hidden.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    horizon = horizon or 60.0 / n
    steps = int(math.ceil(horizon / dt))
    tau = ball_exit_times(n, 1.0, np.uint64(seed), first_path, samples, dt, steps, True)
    L, capped = total_occupation(n + 2, 1.0, r_out, np.uint64(seed + 1), first_path,
                                 samples, dt, steps)
    fin = np.isfinite(tau)
    summary = CTSummary(n, samples, dt, ks_statistic(tau[fin], L), float(tau[fin].mean()),
                        float(L.mean()), int((~fin).sum()), int(capped.sum()))
    return summary, tau, L


def ball_sup_surrogate(n: int, k: int, T: float, paths: int, centers: int = 100,
                       seed: int = 0, dt: float = 1e-3, quantile: float = 0.999):
    """Normalized occupations ``n L(2B_{e^k}(p)) / e^{2k}`` over random centres ``p``.

    Centres are path samples at uniformly drawn times, so they sit where the
    path actually goes.  Returns ``(values, rho_hat, fraction <= rho_hat)`` with
    ``rho_hat`` the empirical ``quantile``.
    """
    rad = 2.0 * math.exp(k)
    steps = int(round(T / dt))
    rng = np.random.default_rng(seed)
    vals = np.empty((paths, centers))
    for p in range(paths):
        path = brownian_path(NoiseStream(seed, p, n - 1, dt), steps)
        pick = rng.integers(0, steps + 1, size=centers)
        for j, i in enumerate(pick):
            vals[p, j] = occupation_time(path, path.positions[i], rad)
    vals *= n / math.exp(2 * k)
    rho = float(np.quantile(vals, quantile))
    return vals, rho, float(np.mean(vals <= rho))
