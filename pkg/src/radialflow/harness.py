"""Monte Carlo hitting probabilities, near-miss refinement, and (n, F) sweeps."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .flow import FlowConfig, foot_points, newton_points, refine_cloud, run_flow
from .geometry import Cylinder, DriftField, HalfSpace
from .stats import Proportion, wilson


@dataclass(frozen=True)
class PathRecord:
    path_index: int
    hit: bool
    tau: float | None
    closest: float
    rounds: int
    changed: bool     # verdict flipped by refinement
    converged: bool   # refinement stopped because the closest approach settled


@dataclass
class HittingEstimate:
    config: dict
    paths: int
    hits: int
    interval: Proportion
    threshold: float
    changed_fraction: float
    converged_fraction: float
    first_path: int = 0

    @property
    def p(self) -> float:
        return self.interval.p

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interval"] = self.interval.to_dict()
        d["p"] = self.p
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def simulate_path(config: FlowConfig, path_index: int, near_factor: float = 3.0,
                  max_rounds: int = 8, tol: float = 1e-3, feet: int = 16,
                  extra: int = 7) -> PathRecord:
    """One flow realization plus a closest-approach search on near misses.

    A path is a near miss when its closest tracer approach is within
    ``near_factor / N`` or within one cloud spacing, or when ``B`` itself came
    within ``near_factor / N`` of the initial region (in n >= 3 a point cloud
    on a surface is sparse and ``B`` can pass between tracers).  The first
    round adds tracers at the boundary points nearest to ``B`` at its closest
    approaches to the initial region; each further round adds a Newton step
    towards ``B`` from the closest tracer plus ``extra`` points around it.
    The search stops at a hit, after ``max_rounds``, or when a round improves
    the closest approach by less than ``tol`` (converged).
    """
    res = run_flow(config, config.stream(path_index))
    h = config.h
    hit0 = res.hit
    rounds = 0
    converged = res.hit
    if not res.hit:
        pts, d_region = foot_points(config, path_index, feet)
        gate = max(near_factor * h, res.cloud.spacing)
        if res.closest[0] <= gate or d_region <= near_factor * h:
            res = refine_cloud(res, points=pts)
            rounds = 1
            while not res.hit and rounds < max_rounds and not res.budget_exhausted:
                prev = res.closest[0]
                pts, _ = newton_points(res, extra, salt=5 + rounds)
                res = refine_cloud(res, points=pts)
                rounds += 1
                if prev - res.closest[0] < tol:
                    converged = True
                    break
            converged = converged or res.hit
    return PathRecord(path_index, res.hit, res.tau, float(res.closest[0]), rounds,
                      res.hit != hit0, converged)


def _block(args):
    config_dict, lo, hi, kw = args
    cfg = FlowConfig.from_dict(config_dict)
    return [simulate_path(cfg, i, **kw) for i in range(lo, hi)]


def simulate_paths(config: FlowConfig, paths: int, first_path: int = 0, workers: int = 1,
                   **kw) -> list[PathRecord]:
    """Per-path records in path order; identical for any worker count."""
    if paths < 1:
        raise ValueError("paths must be >= 1")
    if workers <= 1 or paths < 2:
        return [simulate_path(config, first_path + i, **kw) for i in range(paths)]
    edges = np.linspace(first_path, first_path + paths, min(workers, paths) + 1).astype(int)
    jobs = [(config.to_dict(), int(a), int(b), kw) for a, b in zip(edges[:-1], edges[1:])]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        blocks = list(ex.map(_block, jobs))
    return [r for b in blocks for r in b]


def summarize(config: FlowConfig, records: list[PathRecord], first_path: int = 0,
              horizon: float | None = None) -> HittingEstimate:
    """Aggregate by integer counts; ``horizon`` counts hits with ``tau <= horizon`` only."""
    hits = sum(1 for r in records if r.hit and (horizon is None or r.tau <= horizon))
    n = len(records)
    cfg = config.to_dict() if horizon is None else replace(config, T=horizon).to_dict()
    return HittingEstimate(cfg, n, hits, wilson(hits, n), config.h,
                           sum(r.changed for r in records) / n,
                           sum(r.converged for r in records) / n, first_path)


def estimate_hitting_probability(config: FlowConfig, paths: int, first_path: int = 0,
                                 workers: int = 1, **kw) -> HittingEstimate:
    records = simulate_paths(config, paths, first_path, workers, **kw)
    return summarize(config, records, first_path)


def hitting_curve(config: FlowConfig, horizons, paths: int, first_path: int = 0,
                  workers: int = 1, **kw) -> tuple[list[HittingEstimate], list[PathRecord]]:
    """Estimates at several horizons from one run to the largest.

    A hit before ``T`` does not depend on the horizon, so each path's flag is
    nondecreasing in ``T`` by construction.
    """
    horizons = sorted(float(t) for t in horizons)
    cfg = replace(config, T=horizons[-1])
    records = simulate_paths(cfg, paths, first_path, workers, **kw)
    return [summarize(cfg, records, first_path, t) for t in horizons], records


def write_records(records, fp) -> None:
    for r in records:
        fp.write(json.dumps(asdict(r), sort_keys=True) + "\n")


# sweeps ---------------------------------------------------------------------

def cell_seed(base: int, n: int, c: float, alpha: float) -> int:
    ss = np.random.SeedSequence([int(base), int(n), int(round(c * 1e9)), int(round(alpha * 1e9))])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class SweepCell:
    n: int
    c: float
    alpha: float
    F: float
    seed: int
    estimate: HittingEstimate


@dataclass
class SweepTable:
    cells: list[SweepCell]
    meta: dict

    def trend(self) -> dict:
        """For each ``(n, alpha)``: is ``p`` nonincreasing in ``c``?"""
        out = {}
        for key in sorted({(c.n, c.alpha) for c in self.cells}):
            row = sorted((c for c in self.cells if (c.n, c.alpha) == key), key=lambda c: c.c)
            ps = [c.estimate.p for c in row]
            out[f"n={key[0]},alpha={key[1]}"] = all(a >= b for a, b in zip(ps, ps[1:]))
        return out

    def to_csv(self, fp) -> None:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["n", "c", "alpha", "F", "seed", "paths", "hits", "p", "lo", "hi",
                    "changed_fraction", "converged_fraction", "dt", "N", "T", "region"])
        for c in self.cells:
            e = c.estimate
            cfg = e.config
            w.writerow([c.n, repr(c.c), repr(c.alpha), repr(c.F), c.seed, e.paths, e.hits,
                        repr(e.p), repr(e.interval.lo), repr(e.interval.hi),
                        repr(e.changed_fraction), repr(e.converged_fraction),
                        repr(cfg["dt"]), repr(cfg["N"]), repr(cfg["T"]),
                        json.dumps(cfg["region"], sort_keys=True)])


def phase_sweep(ns, cs, alphas, paths: int, seed: int = 0, T: float = 10.0, dt: float = 1e-4,
                N: float = 100.0, m: float = 8.0, budget: int = 256, workers: int = 1,
                region_factory=None, **flow_kw) -> SweepTable:
    """Hitting estimates with ``F = c n^alpha`` over the grid; half-space ``{x_1 >= 1}`` by default."""
    if not (len(ns) and len(cs) and len(alphas)):
        raise ValueError("grids must be nonempty")
    region_factory = region_factory or (lambda n: HalfSpace(n, 1.0, m))
    cells = []
    for n in ns:
        for a in alphas:
            for c in cs:
                F = float(c) * float(n) ** float(a)
                s = cell_seed(seed, n, c, a)
                cfg = FlowConfig(int(n), DriftField.constant(F), region_factory(int(n)), N=N, T=T,
                                 dt=dt, budget=budget, seed=s, **flow_kw)
                cells.append(SweepCell(int(n), float(c), float(a), F, s,
                                       estimate_hitting_probability(cfg, paths, workers=workers)))
    meta = {"seed": seed, "T": T, "dt": dt, "N": N, "m": m, "budget": budget, "paths": paths}
    return SweepTable(cells, meta)


def cylinder_experiment(a, delta: float, drift: DriftField, paths: int, T: float = 50.0,
                        dt: float = 1e-4, N: float = 100.0, budget: int = 256, seed: int = 0,
                        workers: int = 1, **flow_kw) -> HittingEstimate:
    """Hitting estimate for the cylinder ``(a_1, a_1 + delta) x B_delta(a_perp)``."""
    a = tuple(float(v) for v in a)
    if a[0] <= 0 or delta <= 0:
        raise ValueError("need a_1 > 0 and delta > 0")
    cfg = FlowConfig(len(a), drift, Cylinder(a, float(delta)), N=N, T=T, dt=dt, budget=budget,
                     seed=seed, **flow_kw)
    return estimate_hitting_probability(cfg, paths, workers=workers)


def zero_drift_half_line(T: float) -> float:
    """``P(sup_{t<=T} W_t >= 1) = 2 Phi(-1/sqrt T)``."""
    return math.erfc(1.0 / math.sqrt(2.0 * T))
