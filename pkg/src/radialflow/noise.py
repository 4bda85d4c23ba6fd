"""Counter-based Gaussian noise and stored Brownian paths.

Every normal variate is a pure function of ``(seed, path_index, coordinate,
step)``: a Philox4x32-10 block is keyed by the seed and addressed by the other
three values, then turned into normals with a ziggurat.  Nothing is stateful,
so paths can be generated in any order, in any worker, and replayed exactly.

Coordinates ``>= AUX_BASE`` are auxiliary channels (bridge midpoints, restart
coin flips, ...) that never collide with the spatial coordinates.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

DEFAULT_DT = 1e-4
AUX_BASE = 1 << 20

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_M32 = 2.0 ** -32


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds; all words are uint64 holding 32-bit values."""
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = ((p1 >> _S32) ^ c1 ^ k0) & _MASK
        n1 = p1 & _MASK
        n2 = ((p0 >> _S32) ^ c3 ^ k1) & _MASK
        n3 = p0 & _MASK
        c0, c1, c2, c3 = n0, n1, n2, n3
    return c0, c1, c2, c3


@nb.njit(cache=True)
def philox_block(counter, key):
    """Raw Philox4x32-10 output for a 4-word counter and 2-word key."""
    out = np.empty(4, dtype=np.uint64)
    a, b, c, d = philox4x32(np.uint64(counter[0]), np.uint64(counter[1]),
                            np.uint64(counter[2]), np.uint64(counter[3]),
                            np.uint64(key[0]), np.uint64(key[1]))
    out[0] = a
    out[1] = b
    out[2] = c
    out[3] = d
    return out


def _ziggurat_tables():
    # Marsaglia-Tsang 128-layer ziggurat for the standard normal.
    m1 = 2147483648.0
    dn = 3.442619855899
    tn = dn
    vn = 9.91256303526217e-3
    kn = np.zeros(128)
    wn = np.zeros(128)
    fn = np.zeros(128)
    q = vn / math.exp(-0.5 * dn * dn)
    kn[0] = (dn / q) * m1
    kn[1] = 0.0
    wn[0] = q / m1
    wn[127] = dn / m1
    fn[0] = 1.0
    fn[127] = math.exp(-0.5 * dn * dn)
    for i in range(126, 0, -1):
        dn = math.sqrt(-2.0 * math.log(vn / dn + math.exp(-0.5 * dn * dn)))
        kn[i + 1] = (dn / tn) * m1
        tn = dn
        fn[i] = math.exp(-0.5 * dn * dn)
        wn[i] = dn / m1
    return kn, wn, fn


_KN, _WN, _FN = _ziggurat_tables()
_KNI = np.floor(_KN).astype(np.int64)
_ZIG_R = 3.442619855899
_REJECT_KEY = np.uint64(0x5BD1E995)


@nb.njit(cache=True, inline="always")
def _words(seed, path, coord, block):
    k0 = np.uint64(seed) & _MASK
    k1 = (np.uint64(seed) >> _S32) & _MASK
    c0 = np.uint64(block) & _MASK
    c1 = np.uint64(coord) & _MASK
    c2 = np.uint64(path) & _MASK
    c3 = (np.uint64(path) >> _S32) & _MASK
    return philox4x32(c0, c1, c2, c3, k0, k1)


@nb.njit(cache=True)
def _zig_slow(hz, iz, seed, path, coord, step):
    # Rejection branch; extra words come from a separately keyed sub-stream
    # addressed by (step, attempt), so the value stays a pure function.
    k0 = np.uint64(seed) & _MASK
    k1 = ((np.uint64(seed) >> _S32) ^ _REJECT_KEY) & _MASK
    c1 = np.uint64(coord) & _MASK
    c2 = np.uint64(path) & _MASK
    attempt = 0
    while True:
        c3 = (((np.uint64(path) >> _S32) & np.uint64(0xFFFF))
              | (np.uint64(attempt) << np.uint64(16))) & _MASK
        w0, w1, w2, w3 = philox4x32(np.uint64(step) & _MASK, c1, c2, c3, k0, k1)
        attempt += 1
        x = hz * _WN[iz]
        if iz == 0:
            # base strip overflow: sample the tail beyond R until accepted
            u1 = (np.float64(w0) + 1.0) * _TWO_M32
            u2 = (np.float64(w1) + 1.0) * _TWO_M32
            x = -math.log(u1) / _ZIG_R
            y = -math.log(u2)
            if y + y >= x * x:
                if hz > 0:
                    return _ZIG_R + x
                return -_ZIG_R - x
            continue
        else:
            u = np.float64(w0) * _TWO_M32
            if _FN[iz] + u * (_FN[iz - 1] - _FN[iz]) < math.exp(-0.5 * x * x):
                return x
        hz = np.int64(np.int32(np.uint32(w2)))
        iz = np.int64(w3 & np.uint64(127))
        if abs(hz) < _KNI[iz]:
            return hz * _WN[iz]


@nb.njit(cache=True, inline="always")
def _zig(wa, wb, seed, path, coord, step):
    hz = np.int64(np.int32(np.uint32(wa)))
    iz = np.int64(wb & np.uint64(127))
    if abs(hz) < _KNI[iz]:
        return hz * _WN[iz]
    return _zig_slow(hz, iz, seed, path, coord, step)


@nb.njit(cache=True)
def normal_at(seed, path, coord, step):
    """Standard normal for a single (seed, path, coordinate, step) address."""
    w0, w1, w2, w3 = _words(seed, path, coord, step // 2)
    if step % 2 == 0:
        return _zig(w0, w1, seed, path, coord, step)
    return _zig(w2, w3, seed, path, coord, step)


@nb.njit(cache=True)
def uniform_at(seed, path, coord, step):
    """Uniform on (0, 1] for an auxiliary address."""
    w0, w1, w2, w3 = _words(seed, path, coord, step // 4)
    j = step % 4
    w = w0
    if j == 1:
        w = w1
    elif j == 2:
        w = w2
    elif j == 3:
        w = w3
    return (np.float64(w) + 1.0) * _TWO_M32


@nb.njit(cache=True)
def _fill_aligned(out, seed, path, coord, block0):
    # fast pass, branch-free so it vectorizes; rejections are marked NaN
    for k in range(out.shape[0] // 2):
        w0, w1, w2, w3 = _words(seed, path, coord, block0 + k)
        hz = np.int64(np.int32(np.uint32(w0)))
        iz = np.int64(w1 & np.uint64(127))
        v = hz * _WN[iz]
        out[2 * k] = v if abs(hz) < _KNI[iz] else np.nan
        hz = np.int64(np.int32(np.uint32(w2)))
        iz = np.int64(w3 & np.uint64(127))
        v = hz * _WN[iz]
        out[2 * k + 1] = v if abs(hz) < _KNI[iz] else np.nan


@nb.njit(cache=True)
def fill_normals(out, seed, path, coord, step0):
    """Write normals for steps ``step0 .. step0+len(out)-1`` of one coordinate."""
    m = out.shape[0]
    if m == 0:
        return
    i = 0
    if step0 % 2 == 1:
        out[0] = normal_at(seed, path, coord, step0)
        i = 1
    full = (m - i) // 2 * 2
    _fill_aligned(out[i:i + full], seed, path, coord, (step0 + i) // 2)
    for j in range(i, i + full):
        if np.isnan(out[j]):
            out[j] = normal_at(seed, path, coord, step0 + j)
    if i + full < m:
        out[m - 1] = normal_at(seed, path, coord, step0 + m - 1)


@nb.njit(cache=True)
def fill_increments(out, seed, path, step0, sqrt_dt):
    """``out[i, c] = sqrt_dt[i] * Z(seed, path, c, step0 + i)``."""
    m, n = out.shape
    col = np.empty(m)
    for c in range(n):
        fill_normals(col, seed, path, c, step0)
        for i in range(m):
            out[i, c] = sqrt_dt[i] * col[i]


@nb.njit(cache=True)
def cumulate(positions, start, increments):
    """positions[0] = start; positions[i+1] = positions[i] + increments[i]."""
    m, n = increments.shape
    for c in range(n):
        positions[0, c] = start[c]
    for i in range(m):
        for c in range(n):
            positions[i + 1, c] = positions[i, c] + increments[i, c]


@dataclass(frozen=True)
class NoiseStream:
    """Address of one driving noise: ``seed`` and ``path_index`` pick it out.

    ``dt`` is either a scalar (uniform schedule) or a tuple of step sizes.
    """

    seed: int
    path_index: int = 0
    dim: int = 1
    dt: float | tuple[float, ...] = DEFAULT_DT

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.path_index < 0:
            raise ValueError("path_index must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def step_sizes(self, step0: int, steps: int) -> np.ndarray:
        if isinstance(self.dt, tuple):
            if step0 + steps > len(self.dt):
                raise ValueError("schedule exhausted")
            return np.asarray(self.dt[step0:step0 + steps], dtype=float)
        return np.full(steps, float(self.dt))

    def with_path(self, path_index: int) -> "NoiseStream":
        return NoiseStream(self.seed, path_index, self.dim, self.dt)


def generate_increments(stream: NoiseStream, steps: int, step0: int = 0) -> np.ndarray:
    """Gaussian increments of shape ``(steps, dim)`` with variance ``dt`` per step."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    sq = np.sqrt(stream.step_sizes(step0, steps))
    out = np.empty((steps, stream.dim))
    fill_increments(out, np.uint64(stream.seed), np.uint64(stream.path_index),
                    step0, sq)
    return out


@dataclass
class BrownianPath:
    """A stored path: ``times[i]`` and ``positions[i]`` (shape ``(len, n)``)."""

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        if len(self.times) != len(self.positions):
            raise ValueError("times and positions differ in length")
        if len(self.times) == 0:
            raise ValueError("empty path")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("times must be nondecreasing")

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def project(self, coords) -> "BrownianPath":
        return BrownianPath(self.times, self.positions[:, list(coords)])

    def perp(self) -> "BrownianPath":
        """The lateral part ``(x_2, ..., x_n)``."""
        return self.project(range(1, self.dim))

    def scaled(self, lam: float) -> "BrownianPath":
        """``(lam^2 t, lam B)``: the Brownian-scaling image of this path."""
        return BrownianPath(self.times * (lam * lam), self.positions * lam)

    def dump(self, fp) -> None:
        """Binary dump: header (magic, n, steps), the dt schedule, then positions."""
        dts = np.diff(self.times)
        with open(fp, "wb") as fh:
            fh.write(struct.pack("<4sII", b"BPTH", self.dim, self.steps))
            fh.write(dts.astype("<f8").tobytes())
            fh.write(self.positions.astype("<f8").tobytes())

    @classmethod
    def load(cls, fp) -> "BrownianPath":
        data = Path(fp).read_bytes()
        magic, n, steps = struct.unpack_from("<4sII", data, 0)
        if magic != b"BPTH":
            raise ValueError("not a path dump")
        off = struct.calcsize("<4sII")
        dts = np.frombuffer(data, "<f8", steps, off)
        off += 8 * steps
        pos = np.frombuffer(data, "<f8", (steps + 1) * n, off).reshape(steps + 1, n)
        times = np.concatenate([[0.0], np.cumsum(dts)])
        return cls(times, pos.copy())


def brownian_path(stream: NoiseStream, steps: int, start=None) -> BrownianPath:
    """Generate and store ``steps`` steps of ``stream`` from ``start`` (default 0)."""
    inc = generate_increments(stream, steps)
    pos = np.empty((steps + 1, stream.dim))
    st = np.zeros(stream.dim) if start is None else np.asarray(start, float)
    cumulate(pos, st, inc)
    dts = stream.step_sizes(0, steps)
    times = np.concatenate([[0.0], np.cumsum(dts)])
    return BrownianPath(times, pos)


@dataclass
class PathBuffer:
    """Lazily extended uniform-step path, grown in chunks as a consumer needs it."""

    stream: NoiseStream
    start: np.ndarray | None = None
    chunk: int = 1 << 14
    positions: np.ndarray = field(init=False)
    filled: int = field(init=False, default=0)

    def __post_init__(self):
        if isinstance(self.stream.dt, tuple):
            raise ValueError("PathBuffer needs a uniform dt")
        n = self.stream.dim
        self.positions = np.empty((self.chunk + 1, n))
        self.positions[0] = 0.0 if self.start is None else self.start
        self.filled = 0

    @property
    def dt(self) -> float:
        return float(self.stream.dt)

    def ensure(self, steps: int) -> None:
        """Make sure positions for steps ``0..steps`` exist."""
        if steps <= self.filled:
            return
        need = max(steps, self.filled + self.chunk)
        cap = self.positions.shape[0] - 1
        if need > cap:
            new_cap = max(need, 2 * cap)
            grown = np.empty((new_cap + 1, self.stream.dim))
            grown[: self.filled + 1] = self.positions[: self.filled + 1]
            self.positions = grown
        m = need - self.filled
        inc = generate_increments(self.stream, m, self.filled)
        cumulate(self.positions[self.filled:need + 1], self.positions[self.filled].copy(), inc)
        self.filled = need

    def path(self, steps: int | None = None) -> BrownianPath:
        k = self.filled if steps is None else steps
        self.ensure(k)
        times = np.arange(k + 1) * self.dt
        return BrownianPath(times, self.positions[: k + 1].copy())


def running_max_abs(path: BrownianPath, coordinate: int) -> float:
    """max |B^(coordinate)| over the stored samples."""
    if not 0 <= coordinate < path.dim:
        raise IndexError(f"coordinate {coordinate} out of range for dim {path.dim}")
    return float(np.max(np.abs(path.positions[:, coordinate])))


@nb.njit(cache=True)
def _crossing_freq_1d(seed, first_path, paths, steps, dt, level):
    hits = 0
    col = np.empty(steps)
    sq = math.sqrt(dt)
    for p in range(paths):
        fill_normals(col, seed, first_path + p, 0, 0)
        x = 0.0
        for i in range(steps):
            x += sq * col[i]
            if abs(x) >= level:
                hits += 1
                break
    return hits


def sup_abs_exceedance(seed: int, paths: int, horizon: float, dt: float,
                       level: float, first_path: int = 0) -> float:
    """Fraction of 1-d paths with ``max_{t<=horizon} |W_t| >= level``."""
    steps = int(round(horizon / dt))
    hits = _crossing_freq_1d(np.uint64(seed), first_path, paths, steps, dt, level)
    return hits / paths


_CH = 256


@nb.njit(cache=True)
def ball_exit_times(dim, radius, seed, first_path, paths, dt, max_steps, bridge):
    """Exit times of ``dim``-dimensional BM from the centred ball of ``radius``.

    With ``bridge`` the crossing between grid points is detected with the
    Brownian-bridge probability ``exp(-2 d0 d1 / dt)`` for the local distances
    to the sphere.  Paths still inside after ``max_steps`` get ``inf``.
    """
    out = np.empty(paths)
    buf = np.empty((dim, _CH))
    x = np.empty(dim)
    sq = math.sqrt(dt)
    for p in range(paths):
        path = first_path + p
        for c in range(dim):
            x[c] = 0.0
        r = 0.0
        k = 0
        hit = -1
        while k < max_steps and hit < 0:
            m = min(_CH, max_steps - k)
            for c in range(dim):
                fill_normals(buf[c, :m], seed, path, c, k)
            for i in range(m):
                d0 = radius - r
                r2 = 0.0
                for c in range(dim):
                    x[c] += sq * buf[c, i]
                    r2 += x[c] * x[c]
                r = math.sqrt(r2)
                if r >= radius:
                    hit = k + i + 1
                    break
                if bridge:
                    q = 2.0 * d0 * (radius - r) / dt
                    if q < 40.0 and uniform_at(seed, path, AUX_BASE, k + i) < math.exp(-q):
                        hit = k + i + 1
                        break
            k += m
        out[p] = hit * dt if hit >= 0 else np.inf
    return out


@nb.njit(cache=True)
def total_occupation(dim, radius, r_out, seed, first_path, paths, dt, max_steps):
    """Total time ``dim``-dimensional BM from 0 spends in the centred ball of ``radius``.

    Transience is handled exactly: on reaching ``|x| >= r_out`` the path returns
    to the sphere of ``radius`` with probability ``(radius/|x|)^(dim-2)`` and,
    by rotational symmetry, continues from the point of that sphere on the
    same ray; otherwise it never returns and the total is final.  Needs
    ``dim >= 3``.  Returns the totals and a flag per path that hit ``max_steps``.
    """
    out = np.empty(paths)
    capped = np.zeros(paths, dtype=np.bool_)
    buf = np.empty((dim, _CH))
    x = np.empty(dim)
    sq = math.sqrt(dt)
    rad2 = radius * radius
    for p in range(paths):
        path = first_path + p
        for c in range(dim):
            x[c] = 0.0
        r2 = 0.0
        occ = 0
        k = 0
        done = False
        while not done:
            if k >= max_steps:
                capped[p] = True
                break
            m = min(_CH, max_steps - k)
            for c in range(dim):
                fill_normals(buf[c, :m], seed, path, c, k)
            for i in range(m):
                if r2 <= rad2:
                    occ += 1
                r2 = 0.0
                for c in range(dim):
                    x[c] += sq * buf[c, i]
                    r2 += x[c] * x[c]
                if r2 >= r_out * r_out:
                    r = math.sqrt(r2)
                    u = uniform_at(seed, path, AUX_BASE, k + i)
                    if u > (radius / r) ** (dim - 2):
                        done = True
                        break
                    f = radius / r
                    r2 = 0.0
                    for c in range(dim):
                        x[c] *= f
                        r2 += x[c] * x[c]
            k += m
        out[p] = occ * dt
    return out, capped
