"""Tracer-cloud integrator for the translated flow ``dpsi = f_N(psi - B) dt``.

The Brownian path ``B`` is generated chunk by chunk from the counter-based
stream and every tracer is advanced independently against it ("tracer-major").
Each tracer moves in aligned dyadic blocks of steps: inside a block its
position is frozen, and at the block end it is pushed radially away from
``B`` by the exact solution of ``dr/dt = F(r)/max(r, h)`` over the block
duration.  The block length adapts to the tracer's distance from ``B`` and is
capped so that a bounding box of ``B`` over the block stays at least
``guard * d`` away from the tracer.  Level 0 blocks are single steps.

Because a tracer's schedule depends only on that tracer and on ``B``, flowing
a subset of a cloud reproduces the corresponding tracers bit for bit, and
runs that differ only by a power-of-two scaling are exact images of each
other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba as nb
import numpy as np

from .geometry import (BallComplement, Cylinder, DriftField, HalfSpace,
                       LateralDisc, advance_radius, region_from_dict,
                       region_to_dict)
from .noise import NoiseStream, cumulate, fill_increments, fill_normals

_GEOM_SEED = np.uint64(0x6A09E667F3BCC908)  # fixed key for quasi-random layouts


# ---------------------------------------------------------------------------
# configuration and records

@dataclass(frozen=True)
class FlowConfig:
    dim: int
    drift: DriftField
    region: object
    N: float = 100.0
    T: float = 1.0
    dt: float = 1e-4
    budget: int = 256
    seed: int = 0
    max_level: int = 10
    eta: float = 0.25
    guard: float = 0.5
    chunk: int = 1 << 14
    record_every: int | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.budget < 1:
            raise ValueError("tracer budget must be >= 1")
        if not (self.N > 0 and self.T > 0 and self.dt > 0):
            raise ValueError("N, T and dt must be > 0")
        if self.region.dim != self.dim:
            raise ValueError("region dimension differs from dim")
        if not 0 <= self.max_level <= 24:
            raise ValueError("max_level must be in [0, 24]")
        if self.chunk % (1 << self.max_level):
            raise ValueError("chunk must be a multiple of 2**max_level")
        if not 0 < self.guard < 1 or self.eta <= 0:
            raise ValueError("need 0 < guard < 1 and eta > 0")
        if self.h >= self.region.distance_from(np.zeros(self.dim)):
            raise ValueError("1/N must be below the initial distance of the region")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    @property
    def window(self) -> int:
        return self.record_every or (1 << self.max_level)

    def stream(self, path_index: int = 0) -> NoiseStream:
        return NoiseStream(self.seed, path_index, self.dim, self.dt)

    def scaled(self, lam: float) -> "FlowConfig":
        return replace(self, drift=self.drift.scaled(lam), region=scale_region(self.region, lam),
                       N=self.N / lam, T=self.T * lam * lam, dt=self.dt * lam * lam)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["drift"] = self.drift.to_dict()
        d["region"] = region_to_dict(self.region)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FlowConfig":
        d = dict(d)
        d["drift"] = DriftField.from_dict(d["drift"])
        d["region"] = region_from_dict(d["region"])
        return cls(**d)


@dataclass
class TracerCloud:
    """Labelled tracers: initial positions, current ``psi`` values, and ``B``."""

    labels: np.ndarray
    initial: np.ndarray
    current: np.ndarray
    b: np.ndarray
    time: float = 0.0
    step: int = 0
    terminated: bool = False
    spacing: float = 1.0
    region: object = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.initial = np.asarray(self.initial, dtype=float)
        self.current = np.asarray(self.current, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.initial.shape != self.current.shape or len(self.labels) != len(self.initial):
            raise ValueError("inconsistent tracer arrays")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.initial.shape[1]

    def distances(self) -> np.ndarray:
        return np.sqrt(((self.current - self.b) ** 2).sum(axis=1))

    def subset(self, idx) -> "TracerCloud":
        idx = np.asarray(idx)
        return replace(self, labels=self.labels[idx], initial=self.initial[idx],
                       current=self.current[idx])

    def merged(self, other: "TracerCloud") -> "TracerCloud":
        return replace(self, labels=np.concatenate([self.labels, other.labels]),
                       initial=np.vstack([self.initial, other.initial]),
                       current=np.vstack([self.current, other.current]))

    def scaled(self, lam: float) -> "TracerCloud":
        return replace(self, initial=self.initial * lam, current=self.current * lam,
                       b=self.b * lam, time=self.time * lam * lam,
                       spacing=self.spacing * lam,
                       region=None if self.region is None else scale_region(self.region, lam))


@dataclass
class FlowResult:
    config: FlowConfig
    seed: int
    path_index: int
    hit: bool
    tau: float | None
    hit_step: int | None
    min_dist: np.ndarray
    argmin: np.ndarray
    closest: tuple[float, int, int]
    cloud: TracerCloud
    refinements: int = 0
    budget_exhausted: bool = False

    def __post_init__(self):
        if self.hit != (self.tau is not None):
            raise ValueError("hit flag must match tau")

    def to_dict(self, downsample: int = 1) -> dict:
        return {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "path_index": self.path_index,
            "hit": self.hit,
            "tau": self.tau,
            "hit_step": self.hit_step,
            "closest": {"distance": self.closest[0], "label": self.closest[1],
                        "step": self.closest[2]},
            "window_steps": self.config.window,
            "min_dist": self.min_dist[::downsample].tolist(),
            "argmin": self.argmin[::downsample].tolist(),
            "refinements": self.refinements,
            "budget_exhausted": self.budget_exhausted,
            "tracers": len(self.cloud),
        }


def scale_region(region, lam: float):
    if isinstance(region, (HalfSpace, LateralDisc)):
        c = None if region.center_perp is None else tuple(lam * v for v in region.center_perp)
        return replace(region, level=region.level * lam, m=region.m * lam, center_perp=c)
    if isinstance(region, BallComplement):
        c = None if region.center is None else tuple(lam * v for v in region.center)
        return replace(region, radius=region.radius * lam, center=c)
    if isinstance(region, Cylinder):
        return Cylinder(tuple(lam * v for v in region.a), region.delta * lam)
    raise TypeError(f"unsupported region {type(region).__name__}")


# ---------------------------------------------------------------------------
# quasi-uniform layouts

@nb.njit(cache=True)
def _fixed_normals(k, n, salt):
    out = np.empty((k, n))
    col = np.empty(k)
    for c in range(n):
        fill_normals(col, _GEOM_SEED, np.uint64(salt), c, 0)
        out[:, c] = col
    return out


def _unit_vectors(k: int, n: int, salt: int) -> np.ndarray:
    g = _fixed_normals(k, n, salt)
    return g / np.sqrt((g * g).sum(axis=1))[:, None]


def sphere_points(k: int, n: int) -> np.ndarray:
    """``k`` quasi-uniform unit vectors in R^n (deterministic)."""
    if n == 1:
        return np.array([[1.0], [-1.0]])[: max(1, min(k, 2))]
    if n == 2:
        th = 2 * np.pi * np.arange(k) / k
        return np.column_stack([np.cos(th), np.sin(th)])
    if n == 3:
        i = np.arange(k) + 0.5
        z = 1 - 2 * i / k
        phi = np.pi * (3 - np.sqrt(5)) * np.arange(k)
        s = np.sqrt(1 - z * z)
        return np.column_stack([z, s * np.cos(phi), s * np.sin(phi)])
    u = _unit_vectors(k, n, 1)
    if k * k * n <= 4_000_000:
        for _ in range(20):  # mild Riesz repulsion
            diff = u[:, None, :] - u[None, :, :]
            d2 = (diff ** 2).sum(-1)
            np.fill_diagonal(d2, np.inf)
            force = (diff / d2[..., None] ** (n / 2)).sum(1)
            force /= np.abs(force).max()
            u = u + 0.1 * math.sqrt(d2.min()) * force
            u /= np.sqrt((u * u).sum(1))[:, None]
    return u


def ball_points(k: int, n: int, salt: int = 2) -> np.ndarray:
    """``k`` quasi-uniform points in the closed unit ball of R^n."""
    if n == 0:
        return np.zeros((k, 0))
    if n == 1:
        return np.linspace(-1, 1, k)[:, None] if k > 1 else np.zeros((1, 1))
    if n == 2:
        i = np.arange(k)
        r = np.sqrt((i + 0.5) / k)
        th = i * np.pi * (3 - np.sqrt(5))
        return np.column_stack([r * np.cos(th), r * np.sin(th)])
    u = _unit_vectors(k, n, salt)
    r = ((np.arange(k) + 0.5) / k)[np.argsort(_fixed_normals(k, 1, salt + 1)[:, 0])] ** (1.0 / n)
    return u * r[:, None]


def _disc_points(level, m, center, n, k):
    lat = ball_points(k, n - 1) * m
    if center is not None:
        lat = lat + np.asarray(center)
    return np.column_stack([np.full(k, float(level)), lat]) if n > 1 else np.full((1, 1), float(level))


def discretize_region(region, budget: int) -> TracerCloud:
    """Place ``budget`` tracers quasi-uniformly on the boundary of ``region``."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n = region.dim
    if isinstance(region, (HalfSpace, LateralDisc)):
        k = 1 if n == 1 else budget
        pts = _disc_points(region.level, region.m, region.center_perp, n, k)
        spacing = 2 * region.m / max(k, 1) ** (1.0 / max(n - 1, 1))
    elif isinstance(region, BallComplement):
        k = min(budget, 2) if n == 1 else budget
        pts = region.radius * sphere_points(k, n)
        if region.center is not None:
            pts = pts + np.asarray(region.center)
        spacing = 2 * np.pi * region.radius / max(k, 1) ** (1.0 / max(n - 1, 1))
    elif isinstance(region, Cylinder):
        pts = _cylinder_points(region, budget)
        spacing = 4 * region.delta / max(budget, 1) ** (1.0 / max(n - 1, 1))
    else:
        raise TypeError(f"unsupported region kind {type(region).__name__}")
    pts = np.ascontiguousarray(pts, dtype=float)
    return TracerCloud(np.arange(len(pts)), pts, pts.copy(), np.zeros(n),
                       spacing=float(spacing), region=region)


def _cylinder_points(cyl: Cylinder, budget: int) -> np.ndarray:
    a = np.asarray(cyl.a, float)
    n, d = len(a), cyl.delta
    if n == 1:
        return np.array([[a[0]], [a[0] + d]])
    cap = math.pi ** ((n - 1) / 2) / math.gamma((n + 1) / 2)  # unit (n-1)-ball volume
    side = (n - 1) * cap  # unit (n-2)-sphere area
    k_cap = max(1, int(round(budget * cap / (2 * cap + side))))
    k_side = max(1, budget - 2 * k_cap)
    near = _disc_points(a[0], d, a[1:], n, k_cap)
    far = _disc_points(a[0] + d, d, a[1:], n, k_cap)
    dirs = sphere_points(k_side, n - 1) if n > 2 else np.array([[1.0], [-1.0]])[np.arange(k_side) % 2]
    x1 = a[0] + d * (np.arange(k_side) + 0.5) / k_side
    sidep = np.column_stack([x1, a[1:] + d * dirs])
    return np.vstack([near, far, sidep])


def project_to_boundary(region, pts: np.ndarray) -> np.ndarray:
    pts = np.array(pts, dtype=float)
    n = region.dim
    if isinstance(region, (HalfSpace, LateralDisc)):
        pts[:, 0] = region.level
        if n > 1:
            c = np.zeros(n - 1) if region.center_perp is None else np.asarray(region.center_perp)
            lat = pts[:, 1:] - c
            r = np.sqrt((lat ** 2).sum(1))
            f = np.where(r > region.m, region.m / np.maximum(r, 1e-300), 1.0)
            pts[:, 1:] = c + lat * f[:, None]
        return pts
    if isinstance(region, BallComplement):
        c = np.zeros(n) if region.center is None else np.asarray(region.center)
        v = pts - c
        r = np.sqrt((v ** 2).sum(1))
        zero = r == 0
        v[zero, 0] = 1.0   # the centre has no nearest point; pick one
        r[zero] = 1.0
        return c + region.radius * v / r[:, None]
    if isinstance(region, Cylinder):
        a = np.asarray(region.a, float)
        d = region.delta
        out = np.empty_like(pts)
        for i, p in enumerate(pts):
            lat = p[1:] - a[1:]
            rl = float(np.linalg.norm(lat))
            u = lat / rl if rl > 0 else np.eye(n - 1)[0] if n > 1 else lat
            cands = []
            for lev in (a[0], a[0] + d):
                q = p.copy()
                q[0] = lev
                if rl > d:
                    q[1:] = a[1:] + d * u
                cands.append(q)
            if n > 1:
                q = p.copy()
                q[0] = min(max(p[0], a[0]), a[0] + d)
                q[1:] = a[1:] + d * u
                cands.append(q)
            out[i] = min(cands, key=lambda q: float(np.sum((q - p) ** 2)))
        return out
    raise TypeError(f"unsupported region kind {type(region).__name__}")


# ---------------------------------------------------------------------------
# numba kernels

@nb.njit(cache=True)
def build_pyramid(B, max_level):
    """Bounding boxes of ``B[i*2^l + 1 .. (i+1)*2^l]`` for every level ``l``."""
    L = B.shape[0] - 1
    n = B.shape[1]
    offs = np.empty(max_level + 1, dtype=np.int64)
    total = 0
    for lv in range(max_level + 1):
        offs[lv] = total
        total += L >> lv
    lo = np.empty((total, n))
    hi = np.empty((total, n))
    for i in range(L):
        for c in range(n):
            lo[i, c] = B[i + 1, c]
            hi[i, c] = B[i + 1, c]
    for lv in range(1, max_level + 1):
        src = offs[lv - 1]
        dst = offs[lv]
        for i in range(L >> lv):
            a = src + 2 * i
            for c in range(n):
                lo[dst + i, c] = min(lo[a, c], lo[a + 1, c])
                hi[dst + i, c] = max(hi[a, c], hi[a + 1, c])
    return offs, lo, hi


@nb.njit(cache=True, inline="always")
def _box_dist(p, lo, hi, row):
    s = 0.0
    for c in range(p.shape[0]):
        v = p[c]
        if v < lo[row, c]:
            g = lo[row, c] - v
            s += g * g
        elif v > hi[row, c]:
            g = v - hi[row, c]
            s += g * g
    return math.sqrt(s)


@nb.njit(cache=True, inline="always")
def _box_maxdist(p, lo, hi, row):
    s = 0.0
    for c in range(p.shape[0]):
        g = max(abs(p[c] - lo[row, c]), abs(p[c] - hi[row, c]))
        s += g * g
    return math.sqrt(s)


@nb.njit(cache=True, inline="always")
def _dist(p, B, k):
    s = 0.0
    for c in range(p.shape[0]):
        g = p[c] - B[k, c]
        s += g * g
    return math.sqrt(s)


@nb.njit(cache=True, inline="always")
def _heuristic_level(d, n, dt, fbound, eta, max_level):
    a = (eta * d) * (eta * d) / n
    if fbound > 0.0:
        b = eta * d * d / fbound
        if b < a:
            a = b
    x = a / dt
    if x < 2.0:
        return 0
    m = int(math.floor(math.log2(x)))
    return m if m < max_level else max_level


@nb.njit(cache=True)
def sweep(mode, P, labels, B, offs, lo, hi, dt, stop, code, params, h, hthr, fbound,
          eta, guard, max_level, hit_step, close_d, close_k, win_min, win_arg,
          k_global, window, stat, arg):
    """Advance every tracer in ``P`` through local steps ``0..stop`` of a chunk.

    ``h`` is the truncation radius of the drift, ``hthr`` the hit threshold.

    mode 0: record each tracer's first step with distance <= hthr (hit_step,
            tracer stops there), per-tracer closest evaluated distance, and
            windowed minima.
    mode 1: per-step minimum distance over tracers into ``stat``/``arg``; with
            ``a = hthr`` it is exact wherever it is <= a and a lower bound
            wherever it is >= 4a (inner block steps may be settled from the
            block box).
    mode 2: per-step maximum first coordinate of updated tracers into
            ``stat``/``arg`` (block-end events only).
    """
    J, n = P.shape
    p = np.empty(n)
    y = np.empty(n)
    for j in range(J):
        for c in range(n):
            p[c] = P[j, c]
        k = 0
        lab = labels[j]
        while k < stop:
            d = _dist(p, B, k)
            m = _heuristic_level(d, n, dt, fbound, eta, max_level) if max_level > 0 else 0
            while m > 0 and (k & ((1 << m) - 1)) != 0:
                m -= 1
            bd = 0.0
            while m > 0:
                bd = _box_dist(p, lo, hi, offs[m] + (k >> m))
                if bd >= guard * d:
                    break
                m -= 1
            e = k + (1 << m)
            last = e if e <= stop else stop
            if mode == 0:
                if d < close_d[j]:
                    close_d[j] = d
                    close_k[j] = k_global + k
                w = (k_global + k) // window
                if d < win_min[w] or (d == win_min[w] and lab < win_arg[w]):
                    win_min[w] = d
                    win_arg[w] = lab
                if m == 0 or bd <= hthr:
                    found = False
                    for s in range(k + 1, last + 1):
                        ds = _dist(p, B, s)
                        if ds < close_d[j]:
                            close_d[j] = ds
                            close_k[j] = k_global + s
                        if ds <= hthr:
                            hit_step[j] = k_global + s
                            found = True
                            break
                    if found:
                        break
            elif mode == 1 and last > k + 1:
                # inner steps: exact distances unless the block box settles the
                # comparison with a and 4a (lower bound >= 4a, or a placeholder 2a
                # when every distance in the box lies strictly between)
                v = -1.0
                if m > 0:
                    if bd >= 4.0 * hthr:
                        v = bd
                    elif bd > hthr and _box_maxdist(p, lo, hi, offs[m] + (k >> m)) < 4.0 * hthr:
                        v = 2.0 * hthr
                for s in range(k + 1, last):
                    ds = v if v >= 0.0 else _dist(p, B, s)
                    if ds < stat[s] or (ds == stat[s] and lab < arg[s]):
                        stat[s] = ds
                        arg[s] = lab
            r2 = 0.0
            for c in range(n):
                y[c] = p[c] - B[last, c]
                r2 += y[c] * y[c]
            r = math.sqrt(r2)
            rn = advance_radius(code, params, r, (last - k) * dt, h)
            if rn != r and r > 0.0:
                f = rn / r
                for c in range(n):
                    p[c] = B[last, c] + y[c] * f
            if mode == 1:
                if rn < stat[last] or (rn == stat[last] and lab < arg[last]):
                    stat[last] = rn
                    arg[last] = lab
            elif mode == 2:
                if p[0] > stat[last] or (p[0] == stat[last] and lab < arg[last]):
                    stat[last] = p[0]
                    arg[last] = lab
            k = last
        for c in range(n):
            P[j, c] = p[c]


@nb.njit(cache=True)
def step_cloud(P, b_new, dt, code, params, h):
    """One exact level-0 update of every tracer against the new ``B``."""
    J, n = P.shape
    for j in range(J):
        r2 = 0.0
        for c in range(n):
            g = P[j, c] - b_new[c]
            r2 += g * g
        r = math.sqrt(r2)
        rn = advance_radius(code, params, r, dt, h)
        if rn != r and r > 0.0:
            f = rn / r
            for c in range(n):
                P[j, c] = b_new[c] + (P[j, c] - b_new[c]) * f


# ---------------------------------------------------------------------------
# chunked driver

class ChunkSource:
    """Regenerates aligned chunks of ``B`` for one stream (pure, replayable)."""

    def __init__(self, seed: int, path_index: int, dim: int, dt: float, chunk: int,
                 max_level: int, step0: int = 0, start=None):
        self.seed = np.uint64(seed)
        self.path = np.uint64(path_index)
        self.dim, self.dt, self.chunk, self.max_level = dim, dt, chunk, max_level
        self.step0 = step0
        self._starts = [np.zeros(dim) if start is None else np.asarray(start, float)]
        self._cache: dict[int, tuple] = {}
        self._sq = np.full(chunk, math.sqrt(dt))

    def get(self, c: int):
        if c in self._cache:
            return self._cache[c]
        while len(self._starts) <= c:
            self.get(len(self._starts) - 1)
        inc = np.empty((self.chunk, self.dim))
        fill_increments(inc, self.seed, self.path, self.step0 + c * self.chunk, self._sq)
        B = np.empty((self.chunk + 1, self.dim))
        cumulate(B, self._starts[c], inc)
        if len(self._starts) == c + 1:
            self._starts.append(B[-1].copy())
        offs, lo, hi = build_pyramid(B, self.max_level)
        item = (B, offs, lo, hi)
        if len(self._cache) > 4:
            self._cache.pop(min(self._cache))
        self._cache[c] = item
        return item


@dataclass
class _Run:
    P: np.ndarray
    hit_step: int
    close_d: np.ndarray
    close_k: np.ndarray
    win_min: np.ndarray
    win_arg: np.ndarray


def integrate(P0: np.ndarray, labels: np.ndarray, cfg: FlowConfig, src: ChunkSource,
              K: int, detect: bool = True) -> _Run:
    """Flow tracers ``P0`` for ``K`` steps, stopping at the first hit if ``detect``."""
    P = np.array(P0, dtype=float, order="C")
    labels = np.asarray(labels, dtype=np.int64)
    J = len(P)
    W = cfg.window
    nwin = (K + W) // W + 1
    win_min = np.full(nwin, np.inf)
    win_arg = np.full(nwin, -1, dtype=np.int64)
    close_d = np.full(J, np.inf)
    close_k = np.full(J, -1, dtype=np.int64)
    code, params = cfg.drift.code, cfg.drift.params
    dummy_f = np.empty(0)
    dummy_i = np.empty(0, dtype=np.int64)
    L = cfg.chunk
    hthr = cfg.h if detect else -1.0
    hit = -1

    def _sweep(P_, stop, hs, cd, ck, wm, wa, c, thr):
        sweep(0, P_, labels, B, offs, lo, hi, cfg.dt, stop, code, params, cfg.h, thr,
              cfg.drift.bound, cfg.eta, cfg.guard, cfg.max_level, hs, cd, ck, wm, wa,
              c * L, W, dummy_f, dummy_i)

    for c in range((K + L - 1) // L):
        B, offs, lo, hi = src.get(c)
        stop = min(L, K - c * L)
        hs = np.full(J, -1, dtype=np.int64)
        P1 = P.copy()
        wm, wa = win_min.copy(), win_arg.copy()
        cd, ck = close_d.copy(), close_k.copy()
        _sweep(P1, stop, hs, cd, ck, wm, wa, c, hthr)
        if detect and (hs >= 0).any():
            hit = int(hs[hs >= 0].min())
            # replay the chunk without detection to finalize every tracer at the hit step
            _sweep(P, hit - c * L, np.full(J, -1, dtype=np.int64), close_d, close_k,
                   win_min, win_arg, c, -1.0)
            w = hit // W
            for j in np.nonzero(hs == hit)[0]:
                close_d[j], close_k[j] = cd[j], ck[j]
                if cd[j] < win_min[w] or (cd[j] == win_min[w] and labels[j] < win_arg[w]):
                    win_min[w], win_arg[w] = cd[j], labels[j]
            break
        P, win_min, win_arg, close_d, close_k = P1, wm, wa, cd, ck
    return _Run(P, hit, close_d, close_k, win_min, win_arg)


def _b_at(src: ChunkSource, step: int) -> np.ndarray:
    c, r = divmod(step, src.chunk)
    if r == 0 and c > 0:
        return src.get(c - 1)[0][-1].copy()
    return src.get(c)[0][r].copy()


def _closest(run: _Run, labels) -> tuple[float, int, int]:
    if len(labels) == 0:
        return (math.inf, -1, -1)
    order = np.lexsort((labels, run.close_d))
    j = order[0]
    return (float(run.close_d[j]), int(labels[j]), int(run.close_k[j]))


def run_flow(config: FlowConfig, stream: NoiseStream | None = None,
             cloud: TracerCloud | None = None) -> FlowResult:
    """Integrate to the horizon or to the first step with min distance <= 1/N."""
    stream = stream or config.stream()
    if stream.dim != config.dim:
        raise ValueError("stream dimension differs from config")
    cloud = cloud or discretize_region(config.region, config.budget)
    src = ChunkSource(stream.seed, stream.path_index, config.dim, config.dt, config.chunk,
                      config.max_level)
    K = config.steps
    run = integrate(cloud.initial, cloud.labels, config, src, K)
    return _assemble(config, stream, cloud, run, K, src)


def _assemble(config, stream, cloud, run, K, src, refinements=0, exhausted=False):
    hit = run.hit_step >= 0
    last = run.hit_step if hit else K
    nwin = last // config.window + 1
    final = replace(cloud, current=run.P, b=_b_at(src, last), time=last * config.dt,
                    step=last, terminated=hit)
    return FlowResult(config, stream.seed, stream.path_index, hit,
                      last * config.dt if hit else None, last if hit else None,
                      run.win_min[:nwin].copy(), run.win_arg[:nwin].copy(),
                      _closest(run, cloud.labels), final, refinements, exhausted)


def advance_cloud(cloud: TracerCloud, db, dt: float, drift: DriftField, N: float) -> TracerCloud:
    """Apply one Brownian increment to ``B``, then the exact drift step to every tracer."""
    if cloud.terminated:
        raise ValueError("cloud is terminated")
    b_new = cloud.b + np.asarray(db, float)
    P = cloud.current.copy()
    step_cloud(P, b_new, dt, drift.code, drift.params, 1.0 / N)
    return replace(cloud, current=P, b=b_new, time=cloud.time + dt, step=cloud.step + 1)


def refinement_points(region, center, radius: float, k: int, salt: int = 3) -> np.ndarray:
    n = region.dim
    pts = np.asarray(center, float) + radius * ball_points(k, n, salt)
    return project_to_boundary(region, pts)


def refine_factor(dim: int, count: int) -> float:
    """Patch shrink factor: about half the new tracers' spacing ratio, clamped to [2, 4]."""
    if dim < 2:
        return 4.0
    return min(4.0, max(2.0, count ** (1.0 / (dim - 1)) / 2.0))


def region_distances(region, pts: np.ndarray) -> np.ndarray:
    """Vectorized distance from each row of ``pts`` to ``region``."""
    pts = np.asarray(pts, float)
    n = region.dim
    if isinstance(region, HalfSpace):
        return np.maximum(region.level - pts[:, 0], 0.0)
    if isinstance(region, LateralDisc):
        c = np.zeros(n - 1) if region.center_perp is None else np.asarray(region.center_perp)
        lat = np.maximum(np.sqrt(((pts[:, 1:] - c) ** 2).sum(1)) - region.m, 0.0)
        return np.hypot(region.level - pts[:, 0], lat)
    if isinstance(region, BallComplement):
        c = np.zeros(n) if region.center is None else np.asarray(region.center)
        return np.maximum(region.radius - np.sqrt(((pts - c) ** 2).sum(1)), 0.0)
    if isinstance(region, Cylinder):
        a = np.asarray(region.a, float)
        dx = np.maximum(np.maximum(a[0] - pts[:, 0], 0.0), pts[:, 0] - a[0] - region.delta)
        lat = np.maximum(np.sqrt(((pts[:, 1:] - a[1:]) ** 2).sum(1)) - region.delta, 0.0)
        return np.hypot(dx, lat)
    raise TypeError(f"unsupported region kind {type(region).__name__}")


def foot_points(config: FlowConfig, path_index: int, k: int = 16, window: int = 256,
                stop: int | None = None) -> tuple[np.ndarray, float]:
    """Boundary points nearest to ``B`` at its ``k`` closest approaches to the initial region.

    Steps are grouped in windows of ``window``; the ``k`` windows with the
    smallest distance contribute one foot point each (the projection of ``B``
    at that window's closest step).  Returns the points and the overall
    smallest distance of ``B`` to the initial region.
    """
    K = config.steps if stop is None else stop
    src = ChunkSource(config.seed, path_index, config.dim, config.dt, config.chunk,
                      config.max_level)
    best_d, best_b = [], []
    for c in range((K + config.chunk - 1) // config.chunk):
        B = src.get(c)[0]
        m = min(config.chunk, K - c * config.chunk)
        d = region_distances(config.region, B[1:m + 1])
        for w0 in range(0, m, window):
            i = w0 + int(np.argmin(d[w0:w0 + window]))
            best_d.append(d[i])
            best_b.append(B[i + 1])
    best_d = np.asarray(best_d)
    order = np.argsort(best_d, kind="stable")[:k]
    pts = project_to_boundary(config.region, np.asarray(best_b)[order])
    return pts, float(best_d[order[0]]) if len(order) else math.inf


def newton_points(result: FlowResult, extra: int = 7, salt: int = 5) -> tuple[np.ndarray, float]:
    """Start points that should move the closest tracer onto ``B``.

    The closest tracer is replayed to its closest step; its start point is
    shifted by the gap ``B - psi`` there (the flow is close to a translation
    on that scale) and projected back to the initial boundary.  ``extra``
    points in a patch of half the gap surround the shifted point, since
    drift stretches the boundary near ``B``.  Returns the points and the gap.
    """
    cfg, cloud = result.config, result.cloud
    _, label, step = result.closest
    j = int(np.nonzero(cloud.labels == label)[0][0])
    x = cloud.initial[j]
    src = ChunkSource(result.seed, result.path_index, cfg.dim, cfg.dt, cfg.chunk, cfg.max_level)
    run = integrate(x[None, :], np.array([label]), cfg, src, step, detect=False)
    g = _b_at(src, step) - run.P[0]
    gap = float(np.linalg.norm(g))
    centre = project_to_boundary(cloud.region, (x + g)[None, :])[0]
    pts = [centre[None, :]]
    if extra > 0:
        pts.append(refinement_points(cloud.region, centre, 0.5 * gap, extra, salt))
    return np.vstack(pts), gap


def refine_cloud(result: FlowResult, stream: NoiseStream | None = None,
                 factor: float | None = None, count: int = 64,
                 max_tracers: int = 1 << 16, points=None,
                 radius: float | None = None) -> FlowResult:
    """Insert tracers around the argmin tracer's start point and replay them.

    Round ``k`` (0-based) places ``count`` tracers in a boundary patch of
    radius ``spacing / factor^k`` (or ``radius``) about the current argmin
    start point, so the first round covers the argmin tracer's own cell and
    later rounds zoom in.  Explicit boundary ``points`` replace the patch.
    Existing tracers are not re-integrated unless the refined tracers hit
    earlier (their states at the new stopping time are then recomputed).
    """
    cfg = result.config
    stream = stream or cfg.stream(result.path_index)
    if stream.seed != result.seed or stream.path_index != result.path_index:
        raise ValueError("replay needs the stream that produced the result")
    factor = refine_factor(cfg.dim, count) if factor is None else factor
    if factor <= 1:
        raise ValueError("factor must be > 1")
    cloud = result.cloud
    if cloud.region is None:
        raise ValueError("cloud has no region to refine on")
    if points is not None:
        new = np.ascontiguousarray(points, dtype=float)
        count = len(new)
    if len(cloud) + count > max_tracers:
        return replace(result, budget_exhausted=True)
    if points is None:
        j = int(np.nonzero(cloud.labels == result.closest[1])[0][0])
        radius = cloud.spacing / factor ** result.refinements if radius is None else radius
        new = refinement_points(cloud.region, cloud.initial[j], radius, count,
                                salt=3 + result.refinements)
    new_labels = np.arange(count) + int(cloud.labels.max()) + 1
    src = ChunkSource(stream.seed, stream.path_index, cfg.dim, cfg.dt, cfg.chunk, cfg.max_level)
    stop = result.hit_step if result.hit else cfg.steps
    rn = integrate(new, new_labels, cfg, src, stop)
    labels = np.concatenate([cloud.labels, new_labels])
    init = np.vstack([cloud.initial, new])
    if rn.hit_step >= 0 and rn.hit_step < stop:
        ro = integrate(cloud.initial, cloud.labels, cfg, src, rn.hit_step, detect=False)
        P = np.vstack([ro.P, rn.P])
        hit_step = rn.hit_step
        old_close_d, old_close_k = ro.close_d, ro.close_k
        k = min(len(ro.win_min), len(rn.win_min))
        wm = np.full(len(rn.win_min), np.inf)
        wa = np.full(len(rn.win_min), -1, dtype=np.int64)
        wm[:k], wa[:k] = ro.win_min[:k], ro.win_arg[:k]
    else:
        P = np.vstack([cloud.current, rn.P])
        hit_step = result.hit_step if result.hit else -1
        old_close_d = np.full(len(cloud), np.inf)
        old_close_k = np.full(len(cloud), -1, dtype=np.int64)
        jo = int(np.nonzero(cloud.labels == result.closest[1])[0][0])
        old_close_d[jo], old_close_k[jo] = result.closest[0], result.closest[2]
        wm = np.full(len(rn.win_min), np.inf)
        wa = np.full(len(rn.win_min), -1, dtype=np.int64)
        wm[: len(result.min_dist)] = result.min_dist
        wa[: len(result.argmin)] = result.argmin
    take = (rn.win_min < wm) | ((rn.win_min == wm) & (rn.win_arg < wa) & (rn.win_arg >= 0))
    wm = np.where(take, rn.win_min, wm)
    wa = np.where(take, rn.win_arg, wa)
    merged = _Run(P, hit_step, np.concatenate([old_close_d, rn.close_d]),
                  np.concatenate([old_close_k, rn.close_k]), wm, wa)
    full = replace(cloud, labels=labels, initial=init, current=P)
    out = _assemble(cfg, stream, full, merged, cfg.steps, src, result.refinements + 1)
    if out.closest[0] > result.closest[0]:
        # keep the better of the two closest approaches
        out.closest = result.closest
    return out


def scale_solution(result: FlowResult, lam: float) -> FlowResult:
    """Image of a flow record under ``x -> lam x``, ``t -> lam^2 t``."""
    if not lam > 0:
        raise ValueError("lam must be > 0")
    if lam == 1:
        return result
    return replace(result, config=result.config.scaled(lam),
                   tau=None if result.tau is None else result.tau * lam * lam,
                   min_dist=result.min_dist * lam,
                   closest=(result.closest[0] * lam, result.closest[1], result.closest[2]),
                   cloud=result.cloud.scaled(lam))
