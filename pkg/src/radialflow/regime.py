"""Regime ladders: the stage-by-stage reduction of the flow to a walk on ``log2 rho``.

Each stage is run at unit scale: positions are translated to ``B_{tau_{i-1}}``
and divided by ``rho_{i-1}``, time by ``rho_{i-1}^2``, so the drift becomes
``r -> F(rho r)`` with truncation radius ``h / rho``.  The unit-scale noise
continues the ladder's step counter, so stages never reuse noise.

not-hitting: region = complement of the unit ball about ``B`` (boundary sphere
    as tracers); ``rho~`` = minimum tracer distance to ``B``.
hitting:     region = ``{x_1 >= 1}`` (lateral disc of radius ``m`` as tracers);
    ``rho~ = max(M, 1) - B^(1)`` with ``M`` the largest tracer height so far.

A stage ends at the first step with ``rho~ <= 1/2`` (X = -1) or ``>= 2`` (X = +1).
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numba as nb
import numpy as np
from scipy.stats import chi2_contingency

from .flow import ChunkSource, discretize_region, refinement_points, sweep
from .geometry import BallComplement, DriftField, LateralDisc
from .noise import fill_normals
from .stats import Proportion, mean_ci, wilson

NOT_HITTING, HITTING = "not-hitting", "hitting"


@dataclass(frozen=True)
class LadderConfig:
    n: int
    drift: DriftField
    kind: str = HITTING
    rho0: float = 1.0
    max_stages: int = 1
    dt: float = 1e-4           # unit-scale step
    N: float = 100.0
    budget: int | None = None  # default 64 n
    m: float = 8.0
    horizon: float = 100.0     # unit-scale stage horizon
    max_level: int = 8
    chunk: int = 256
    refine_rounds: int = 2
    refine_count: int = 32
    refine_factor: float = 4.0
    seed: int = 0
    fast_zero: bool = True     # F == 0 hitting stages via the 1-d level-crossing scan

    def __post_init__(self):
        if self.kind not in (NOT_HITTING, HITTING):
            raise ValueError(f"unknown ladder kind {self.kind!r}")
        if self.n < 1 or self.max_stages < 1:
            raise ValueError("need n >= 1 and max_stages >= 1")
        if not (self.rho0 > 0 and self.dt > 0 and self.N > 0 and self.m > 0 and self.horizon > 0):
            raise ValueError("rho0, dt, N, m, horizon must be > 0")
        if self.chunk % (1 << self.max_level):
            raise ValueError("chunk must be a multiple of 2**max_level")
        if self.rho0 * self.N <= 1:
            raise ValueError("rho0 must exceed the truncation radius 1/N")

    @property
    def tracers(self) -> int:
        return self.budget or 64 * self.n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drift"] = self.drift.to_dict()
        return d


@dataclass
class RegimeLadder:
    kind: str
    n: int
    seed: int
    path_index: int
    times: list = field(default_factory=list)   # tau_0 = 0, tau_1, ...
    rhos: list = field(default_factory=list)    # rho_0, rho_1, ...
    steps: list = field(default_factory=list)   # X_i
    D: list = field(default_factory=list)       # hitting: D_{tau_i} (physical units)
    stage_steps: list = field(default_factory=list)
    refined: list = field(default_factory=list)  # refinement rounds used per stage
    termination: str = "max stages"

    @property
    def X(self) -> np.ndarray:
        return np.asarray(self.steps, dtype=np.int64)

    def bookkeeping_holds(self) -> bool:
        return 2.0 ** int(self.X.sum()) == self.rhos[-1] / self.rhos[0]

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# kernels

@nb.njit(cache=True)
def _zero_drift_scan(seed, path, step0, dt, K, chunk):
    """First step with ``1 - B^(1) <= 1/2`` or ``>= 2``; returns (step, X, B1) or (-1, 0, B1)."""
    col = np.empty(chunk)
    sq = math.sqrt(dt)
    x = 0.0
    k = 0
    while k < K:
        m = min(chunk, K - k)
        fill_normals(col[:m], seed, path, 0, step0 + k)
        for i in range(m):
            x = x + sq * col[i]
            r = 1.0 - x
            if r <= 0.5:
                return k + i + 1, -1, x
            if r >= 2.0:
                return k + i + 1, 1, x
        k += m
    return -1, 0, x


@nb.njit(cache=True)
def _merge(stat, arg, s2, a2, take_max):
    for i in range(stat.shape[0]):
        v, w = s2[i], a2[i]
        if w < 0:
            continue
        if take_max:
            better = v > stat[i] or (v == stat[i] and (arg[i] < 0 or w < arg[i]))
        else:
            better = v < stat[i] or (v == stat[i] and (arg[i] < 0 or w < arg[i]))
        if better:
            stat[i] = v
            arg[i] = w


@nb.njit(cache=True)
def _decide(kind_hit, stat, arg, B1, upto, M0, A0):
    """Scan steps ``1..upto``; returns (step, X, M, argM) at the first decision or (-1, 0, M, A)."""
    M, A = M0, A0
    for s in range(1, upto + 1):
        if kind_hit:
            if arg[s] >= 0 and (stat[s] > M or (stat[s] == M and arg[s] < A)):
                M, A = stat[s], arg[s]
            top = M if M > 1.0 else 1.0
            r = top - B1[s]
        else:
            r = stat[s]
            A = arg[s]
        if r <= 0.5:
            return s, -1, M, A
        if r >= 2.0:
            return s, 1, M, A
    return -1, 0, M, A


# ---------------------------------------------------------------------------
# one stage at unit scale

@dataclass
class _Stage:
    step: int          # decisive unit-scale step, -1 if unresolved
    X: int
    M: float           # hitting: max tracer height at the decisive step
    refined: int


class _Tracers:
    def __init__(self, P, labels, init):
        self.P, self.labels, self.init = P, labels, init


def _sweep_chunk(mode, tr: _Tracers, B, offs, lo, hi, stop, cfg, code, params, h, fb,
                 level=0.5):
    L = B.shape[0] - 1
    stat = np.full(L + 1, -np.inf if mode == 2 else np.inf)
    arg = np.full(L + 1, -1, dtype=np.int64)
    di = np.empty(0, dtype=np.int64)
    df = np.empty(0)
    sweep(mode, tr.P, tr.labels, B, offs, lo, hi, cfg.dt, stop, code, params, h, level, fb,
          0.25, 0.5, cfg.max_level, di, df, di, df, di, 0, 1, stat, arg)
    return stat, arg


@functools.lru_cache(maxsize=32)
def _unit_cloud(region, budget):
    return discretize_region(region, budget)


def run_stage(cfg: LadderConfig, drift_unit: DriftField, h_unit: float, path_index: int,
              step0: int) -> _Stage:
    n = cfg.n
    K = int(round(cfg.horizon / cfg.dt))
    hit_kind = cfg.kind == HITTING
    if hit_kind and drift_unit.is_zero and cfg.fast_zero:
        s, x, _ = _zero_drift_scan(np.uint64(cfg.seed), np.uint64(path_index), step0, cfg.dt,
                                   K, cfg.chunk)
        return _Stage(s, x, 1.0, 0)

    region = LateralDisc(n, 1.0, cfg.m) if hit_kind else BallComplement(n, 1.0)
    cloud = _unit_cloud(region, cfg.tracers)
    mode = 2 if hit_kind else 1
    code, params, fb = drift_unit.code, drift_unit.params, drift_unit.bound
    src = ChunkSource(cfg.seed, path_index, n, cfg.dt, cfg.chunk, cfg.max_level, step0)
    L = cfg.chunk
    tr = _Tracers(cloud.initial.copy(), cloud.labels.copy(), cloud.initial.copy())
    stats, args, B1 = [], [], []
    M, A = -np.inf, -1
    rounds = 0

    def decide_all(upto_chunk):
        Mx, Ax = -np.inf, -1
        for cc in range(upto_chunk + 1):
            sc = min(L, K - cc * L)
            s_, X_, Mx, Ax = _decide(hit_kind, stats[cc], args[cc], B1[cc], sc, Mx, Ax)
            if s_ >= 0:
                return cc * L + s_, X_, Mx, Ax
        return -1, 0, Mx, Ax

    for c in range((K + L - 1) // L):
        B, offs, lo, hi = src.get(c)
        stop = min(L, K - c * L)
        st, ag = _sweep_chunk(mode, tr, B, offs, lo, hi, stop, cfg, code, params, h_unit, fb)
        stats.append(st)
        args.append(ag)
        B1.append(B[:, 0].copy())
        s, X, M, A = _decide(hit_kind, st, ag, B1[-1], stop, M, A)
        s = c * L + s if s >= 0 else -1
        # A < 0: no tracer recorded yet, the verdict rests on the far-field level
        while s >= 0 and rounds < cfg.refine_rounds and A >= 0:
            rounds += 1
            j = int(np.nonzero(tr.labels == A)[0][0])
            radius = cloud.spacing / cfg.refine_factor ** rounds
            new = refinement_points(region, tr.init[j], radius, cfg.refine_count, salt=3 + rounds)
            lab = np.arange(cfg.refine_count, dtype=np.int64) + int(tr.labels.max()) + 1
            ntr = _Tracers(new.copy(), lab, new)
            for cc in range(c + 1):
                Bc, oc, lc, hc = src.get(cc)
                sc = min(L, K - cc * L)
                s2, a2 = _sweep_chunk(mode, ntr, Bc, oc, lc, hc, sc, cfg, code, params, h_unit, fb)
                _merge(stats[cc], args[cc], s2, a2, hit_kind)
            tr = _Tracers(np.vstack([tr.P, ntr.P]), np.concatenate([tr.labels, lab]),
                          np.vstack([tr.init, new]))
            s, X, M, A = decide_all(c)
        if s >= 0:
            return _Stage(s, X, M, rounds)
    return _Stage(-1, 0, M, rounds)


# ---------------------------------------------------------------------------
# ladders

def run_ladder(cfg: LadderConfig, path_index: int) -> RegimeLadder:
    lad = RegimeLadder(cfg.kind, cfg.n, cfg.seed, path_index, [0.0], [cfg.rho0])
    rho = cfg.rho0
    t = 0.0
    step0 = 0
    for _ in range(cfg.max_stages):
        if rho * cfg.N <= 1.0:
            lad.termination = "absorbed"
            return lad
        st = run_stage(cfg, cfg.drift.scaled(1.0 / rho), 1.0 / (cfg.N * rho), path_index, step0)
        if st.step < 0:
            lad.termination = "horizon"
            return lad
        step0 += st.step
        t += rho * rho * st.step * cfg.dt
        if cfg.kind == HITTING:
            lad.D.append(rho * (st.M - 1.0) if st.M > -np.inf else 0.0)
        rho = rho * 2.0 if st.X > 0 else rho * 0.5
        lad.times.append(t)
        lad.rhos.append(rho)
        lad.steps.append(int(st.X))
        lad.stage_steps.append(int(st.step))
        lad.refined.append(int(st.refined))
    return lad


def not_hitting_ladder(n: int, drift: DriftField, rho0: float = 1.0, max_stages: int = 1,
                       seed: int = 0, path_index: int = 0, **kw) -> RegimeLadder:
    cfg = LadderConfig(n, drift, NOT_HITTING, rho0, max_stages, seed=seed, **kw)
    return run_ladder(cfg, path_index)


def hitting_ladder(n: int, drift: DriftField, m: float = 8.0, max_stages: int = 1,
                   seed: int = 0, path_index: int = 0, rho0: float = 1.0, **kw) -> RegimeLadder:
    cfg = LadderConfig(n, drift, HITTING, rho0, max_stages, m=m, seed=seed, **kw)
    return run_ladder(cfg, path_index)


def ladder_ensemble(cfg: LadderConfig, paths: int, first_path: int = 0) -> list[RegimeLadder]:
    return [run_ladder(cfg, first_path + i) for i in range(paths)]


def run_unreset_ladder(cfg: LadderConfig, path_index: int) -> RegimeLadder:
    """The ladder read off one uninterrupted flow of the original region.

    No stage restarts: the tracers of the initial region (ball complement or
    lateral disc at distance ``rho0``) flow at physical scale with step
    ``dt rho0^2`` for ``max_stages * horizon`` unit times, and the stage
    times are the successive halvings/doublings of the same distance series.
    ``D`` holds the first stage only.  No refinement.
    """
    hit_kind = cfg.kind == HITTING
    n, rho0 = cfg.n, cfg.rho0
    region = (LateralDisc(n, rho0, cfg.m * rho0) if hit_kind else BallComplement(n, rho0))
    cloud = _unit_cloud(region, cfg.tracers)
    phys = replace(cfg, dt=cfg.dt * rho0 * rho0)
    K = int(round(cfg.max_stages * cfg.horizon / cfg.dt))
    src = ChunkSource(cfg.seed, path_index, n, phys.dt, cfg.chunk, cfg.max_level, 0)
    tr = _Tracers(cloud.initial.copy(), cloud.labels.copy(), cloud.initial)
    code, params, fb = cfg.drift.code, cfg.drift.params, cfg.drift.bound
    lad = RegimeLadder(cfg.kind, n, cfg.seed, path_index, [0.0], [rho0])
    rho, M, last = rho0, -np.inf, 0
    mode = 2 if hit_kind else 1
    for c in range((K + cfg.chunk - 1) // cfg.chunk):
        B, offs, lo, hi = src.get(c)
        stop = min(cfg.chunk, K - c * cfg.chunk)
        P0 = tr.P.copy()
        st, _ = _sweep_chunk(mode, tr, B, offs, lo, hi, stop, phys, code, params,
                             1.0 / cfg.N, fb, rho / 2)
        for s in range(1, stop + 1):
            if hit_kind:
                M = max(M, st[s])
                r = max(M, rho0) - B[s, 0]
            else:
                r = st[s]
            if rho / 2 < r < 2 * rho:
                continue
            k = c * cfg.chunk + s
            if hit_kind and not lad.D:
                lad.D.append(M - rho0 if M > -np.inf else 0.0)
            rho = rho * 2.0 if r >= 2 * rho else rho * 0.5
            lad.times.append(k * phys.dt)
            lad.rhos.append(rho)
            lad.steps.append(1 if r >= lad.rhos[-2] * 2 else -1)
            lad.stage_steps.append(k - last)
            lad.refined.append(0)
            last = k
            if len(lad.steps) == cfg.max_stages:
                return lad
            if rho * cfg.N <= 1.0:
                lad.termination = "absorbed"
                return lad
            if not hit_kind:
                # the settled distances after step s used the old levels; redo the chunk
                tr.P = P0.copy()
                st, _ = _sweep_chunk(mode, tr, B, offs, lo, hi, stop, phys, code, params,
                                     1.0 / cfg.N, fb, rho / 2)
    lad.termination = "horizon"
    return lad


@dataclass
class ResetComparison:
    reset: StepEstimate
    unreset: StepEstimate
    p_value: float   # chi-square test of equal up-probabilities


def compare_resets(cfg: LadderConfig, paths: int, stage: int = 0,
                   first_path: int = 0) -> ResetComparison:
    """Step law of the literal stage-reset ladder against the uninterrupted flow."""
    a = step_probability(ladder_ensemble(cfg, paths, first_path), stage)
    b = step_probability([run_unreset_ladder(cfg, first_path + i) for i in range(paths)], stage)
    table = [[a.interval.successes, a.interval.trials - a.interval.successes],
             [b.interval.successes, b.interval.trials - b.interval.successes]]
    if min(map(sum, zip(*table))) == 0:
        p = 1.0   # both samples all up or all down
    else:
        p = float(chi2_contingency(table).pvalue)
    return ResetComparison(a, b, p)


def write_jsonl(ladders, fp) -> None:
    for lad in ladders:
        fp.write(json.dumps(lad.to_dict(), sort_keys=True) + "\n")


def read_jsonl(fp) -> list[RegimeLadder]:
    return [RegimeLadder(**json.loads(line)) for line in fp if line.strip()]


# ---------------------------------------------------------------------------
# estimators

@dataclass
class StepEstimate:
    interval: Proportion
    verdict: dict  # reference level -> "above" / "below" / "consistent"

    @property
    def p(self) -> float:
        return self.interval.p

    def line(self) -> str:
        v = ", ".join(f"{k}: {w}" for k, w in self.verdict.items())
        ci = self.interval
        return f"p = {ci.p:.4f} [{ci.lo:.4f}, {ci.hi:.4f}] (n = {ci.trials}); {v}"


def step_probability(ladders, stage: int = 0, min_resolved: int = 30) -> StepEstimate:
    """Fraction of ``X_{stage+1} = +1`` among ladders that resolved that stage."""
    xs = [lad.steps[stage] for lad in ladders if len(lad.steps) > stage]
    if len(xs) < min_resolved:
        raise ValueError(f"only {len(xs)} resolved stages (need {min_resolved})")
    ci = wilson(sum(1 for x in xs if x > 0), len(xs))
    verdict = {}
    for name, ref in (("1/3", 1 / 3), ("1/2", 0.5), ("2/3", 2 / 3)):
        verdict[name] = "above" if ci.lo > ref else "below" if ci.hi < ref else "consistent"
    return StepEstimate(ci, verdict)


def mean_step(ladders, level: float = 0.95) -> tuple[float, float, float]:
    """Mean of all recorded ``X_i`` with a normal-theory interval."""
    xs = np.concatenate([lad.X for lad in ladders if lad.steps])
    return mean_ci(xs.astype(float), level)


def d_bound_check(ladders, delta: float) -> Proportion:
    """Empirical ``P(D_{tau_1} <= 1/4 - 2 delta)`` over hitting ladders with a first stage."""
    if not 0 < delta <= 0.125:
        raise ValueError("delta must lie in (0, 1/8]")
    ds = [lad.D[0] for lad in ladders if lad.D]
    thr = 0.25 - 2 * delta
    return wilson(sum(1 for d in ds if d <= thr), len(ds))


@dataclass
class DriftAccumulator:
    lateral: float
    vertical: float
    lateral_bins: np.ndarray   # index 0: |q| < 2e, k: [2e^k, 2e^(k+1)), last: beyond 2e^{k_inf}
    vertical_bins: np.ndarray
    edges: np.ndarray
    test_point: np.ndarray
    tau1: float
    resolved: bool

    def to_dict(self) -> dict:
        return {"lateral": self.lateral, "vertical": self.vertical,
                "lateral_bins": self.lateral_bins.tolist(),
                "vertical_bins": self.vertical_bins.tolist(), "edges": self.edges.tolist(),
                "test_point": self.test_point.tolist(), "tau1": self.tau1,
                "resolved": self.resolved}


def k_infinity(n: int) -> int:
    return max(1, math.ceil(math.log(n) / 2))


@nb.njit(cache=True)
def _accumulate(Bp, q, F, dt, edges, lat, ver):
    for i in range(Bp.shape[0]):
        s = 0.0
        for c in range(Bp.shape[1]):
            g = q[c] - Bp[i, c]
            s += g * g
        k = 0
        r = math.sqrt(s)
        while k < edges.shape[0] and r >= edges[k]:
            k += 1
        lat[k] += F * dt / math.sqrt(0.25 + s)
        ver[k] += F * dt / (0.25 + s)


def drift_accumulators(cfg: LadderConfig, path_index: int = 0, test_point=None) -> DriftAccumulator:
    """Kernel integrals along ``[0, tau_1)`` of the first hitting stage (unit scale).

    ``test_point`` is a point ``p`` (its lateral part is used); default the foot
    ``(1, 0, ..., 0)``.  Left-endpoint sums; the totals are the sums of the bins.
    """
    if cfg.kind != HITTING:
        raise ValueError("drift accumulators are defined on the hitting ladder")
    n = cfg.n
    p = np.zeros(n) if test_point is None else np.asarray(test_point, float)
    p[0] = 1.0 if test_point is None else p[0]
    edges = 2.0 * np.exp(np.arange(1, k_infinity(n) + 1, dtype=float))
    st = run_stage(cfg, cfg.drift, 1.0 / cfg.N, path_index, 0)
    K = st.step if st.step >= 0 else int(round(cfg.horizon / cfg.dt))
    lat = np.zeros(len(edges) + 1)
    ver = np.zeros(len(edges) + 1)
    F = cfg.drift.bound
    if F > 0:
        src = ChunkSource(cfg.seed, path_index, n, cfg.dt, cfg.chunk, cfg.max_level, 0)
        q = np.ascontiguousarray(p[1:])
        for c in range((K + cfg.chunk - 1) // cfg.chunk):
            B = src.get(c)[0]
            stop = min(cfg.chunk, K - c * cfg.chunk)
            _accumulate(np.ascontiguousarray(B[:stop, 1:]), q, F, cfg.dt, edges, lat, ver)
    return DriftAccumulator(float(lat.sum()), float(ver.sum()), lat, ver, edges, p,
                            K * cfg.dt, st.step >= 0)
