"""Points, regions, drift fields, and the radial drift kernels.

Points are plain float arrays of shape ``(n,)``.  A drift field ``F`` is a
function of the radius only; the vector drift at displacement ``y`` is
``F(|y|) / max(|y|, h) * y/|y|`` with truncation radius ``h = 1/N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

CONSTANT, TABLE, SATURATING = 0, 1, 2
_KIND_CODES = {"constant": CONSTANT, "table": TABLE, "saturating": SATURATING}

# Relative radius change allowed per ODE sub-step for non-constant fields.
ODE_SUBSTEP_FRACTION = 0.05


def point(coords, n: int | None = None) -> np.ndarray:
    x = np.array(coords, dtype=float).reshape(-1)
    if x.size < 1:
        raise ValueError("a point needs at least one coordinate")
    if n is not None and x.size != n:
        raise ValueError(f"expected {n} coordinates, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("coordinates must be finite")
    return x


def unit_radial(x) -> np.ndarray:
    """x/|x|, with the origin mapped to the zero vector."""
    x = point(x)
    r = math.hypot(*x)   # scaled: no underflow for tiny x
    if r == 0.0:
        return np.zeros_like(x)
    return x / r


@dataclass(frozen=True)
class DriftField:
    """Radial drift profile ``F(r) >= 0`` with a declared bound and Lipschitz constant.

    ``values`` holds the family parameters: ``(c,)`` for constant,
    ``(r_0..r_k, v_0..v_k)`` for a piecewise-linear table, ``(c, s)`` for the
    saturating family ``c r / (r + s)``.
    """

    kind: str
    bound: float
    lipschitz: float
    values: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.bound < 0 or self.lipschitz < 0:
            raise ValueError("bound and lipschitz must be >= 0")

    @classmethod
    def constant(cls, c: float) -> "DriftField":
        if c < 0 or not math.isfinite(c):
            raise ValueError("constant drift must be finite and >= 0")
        return cls("constant", float(c), 0.0, (float(c),))

    @classmethod
    def table(cls, radii, values) -> "DriftField":
        r = np.asarray(radii, float)
        v = np.asarray(values, float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 2:
            raise ValueError("table needs matching 1-d radii and values (>= 2 knots)")
        if np.any(np.diff(r) <= 0) or r[0] < 0:
            raise ValueError("table radii must be increasing and >= 0")
        if np.any(v < 0):
            raise ValueError("table values must be >= 0")
        lip = float(np.max(np.abs(np.diff(v) / np.diff(r))))
        return cls("table", float(v.max()), lip, tuple(r) + tuple(v))

    @classmethod
    def saturating(cls, c: float, s: float) -> "DriftField":
        if c < 0 or s <= 0:
            raise ValueError("need c >= 0 and s > 0")
        return cls("saturating", float(c), float(c) / float(s), (float(c), float(s)))

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def params(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def is_zero(self) -> bool:
        return self.bound == 0.0

    def __call__(self, r):
        r = np.asarray(r, float)
        out = np.empty_like(r, dtype=float)
        flat = out.reshape(-1)
        for i, ri in enumerate(r.reshape(-1)):
            flat[i] = drift_profile(self.code, self.params, float(ri))
        return out if out.ndim else float(out)

    def scaled(self, lam: float) -> "DriftField":
        """The profile ``r -> F(r / lam)``."""
        if lam <= 0:
            raise ValueError("lam must be > 0")
        if self.kind == "constant":
            return self
        if self.kind == "table":
            k = len(self.values) // 2
            r = np.asarray(self.values[:k]) * lam
            return DriftField.table(r, self.values[k:])
        c, s = self.values
        return DriftField.saturating(c, s * lam)

    def validate(self, r_max: float = 100.0, samples: int = 4001) -> None:
        """Check the declared bound and Lipschitz constant on a sampling grid."""
        r = np.linspace(0.0, r_max, samples)
        f = self(r)
        if np.any(f < 0) or np.any(f > self.bound * (1 + 1e-12)):
            raise ValueError("drift leaves [0, bound] on the validation grid")
        slopes = np.abs(np.diff(f) / np.diff(r))
        if np.any(slopes > self.lipschitz * (1 + 1e-9) + 1e-12):
            raise ValueError("drift slope exceeds the declared Lipschitz constant")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "DriftField":
        kind, vals = d["kind"], list(d["values"])
        if kind == "constant":
            return cls.constant(*vals)
        if kind == "saturating":
            return cls.saturating(*vals)
        k = len(vals) // 2
        return cls.table(vals[:k], vals[k:])


@nb.njit(cache=True)
def drift_profile(code, params, r):
    if code == CONSTANT:
        return params[0]
    if code == SATURATING:
        return params[0] * r / (r + params[1])
    k = params.shape[0] // 2
    if r <= params[0]:
        return params[k]
    if r >= params[k - 1]:
        return params[2 * k - 1]
    lo = 0
    hi = k - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if params[mid] <= r:
            lo = mid
        else:
            hi = mid
    w = (r - params[lo]) / (params[hi] - params[lo])
    return params[k + lo] + w * (params[k + hi] - params[k + lo])


@nb.njit(cache=True)
def _radial_speed(code, params, r, h):
    den = r if r > h else h
    return drift_profile(code, params, r) / den


@nb.njit(cache=True)
def advance_radius(code, params, r, tau, h):
    """Solve ``dr/dt = F(r) / max(r, h)`` for time ``tau`` from ``r``.

    The constant family is solved in closed form (``r^2`` grows linearly above
    ``h``); other families use RK4 with sub-steps that move the radius by at
    most ``ODE_SUBSTEP_FRACTION`` of ``max(r, h)``.
    """
    if tau <= 0.0:
        return r
    if code == CONSTANT:
        c = params[0]
        if c == 0.0:
            return r
        if r < h:
            t_h = (h - r) * h / c
            if tau <= t_h:
                return r + c * tau / h
            tau = tau - t_h
            r = h
        return math.sqrt(r * r + 2.0 * c * tau)
    left = tau
    while left > 0.0:
        g = _radial_speed(code, params, r, h)
        if g == 0.0:
            return r
        scale = r if r > h else h
        dt = ODE_SUBSTEP_FRACTION * scale / g
        if dt > left:
            dt = left
        k1 = g
        k2 = _radial_speed(code, params, r + 0.5 * dt * k1, h)
        k3 = _radial_speed(code, params, r + 0.5 * dt * k2, h)
        k4 = _radial_speed(code, params, r + dt * k3, h)
        r = r + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        left -= dt
    return r


def truncated_drift(x, field: DriftField, N: float) -> np.ndarray:
    """``F(|x|) / (|x| v 1/N) * u(x)``."""
    if not N > 0:
        raise ValueError("truncation level N must be > 0")
    x = point(x)
    r = math.hypot(*x)
    if r == 0.0:
        return np.zeros_like(x)
    mag = field(r) / max(r, 1.0 / N)
    return mag * (x / r)


def radial_projection_bound(a, b) -> float:
    """``(b - a) . u(b)`` for ``|a| <= 1/2`` and ``1 <= |b| <= 5/2``; always >= 1/2."""
    a = point(a)
    b = point(b, a.size)
    na = float(np.linalg.norm(a))
    nb_ = float(np.linalg.norm(b))
    if na > 0.5 + 1e-12 or not (1.0 - 1e-12 <= nb_ <= 2.5 + 1e-12):
        raise ValueError("need |a| <= 1/2 and 1 <= |b| <= 5/2")
    return float(np.dot(b - a, b / nb_))


# Regions ---------------------------------------------------------------------

@dataclass(frozen=True)
class HalfSpace:
    """``{x_1 >= level}``; discretized as a lateral disc of radius ``m`` about ``center_perp``."""

    dim: int
    level: float = 1.0
    m: float = 8.0
    center_perp: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("lateral radius m must be > 0")

    def distance_from(self, x) -> float:
        return max(self.level - float(point(x, self.dim)[0]), 0.0)


@dataclass(frozen=True)
class BallComplement:
    """Complement of the open ball of ``radius`` about ``center``."""

    dim: int
    radius: float = 1.0
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be > 0")

    def distance_from(self, x) -> float:
        c = np.zeros(self.dim) if self.center is None else np.asarray(self.center)
        return max(self.radius - float(np.linalg.norm(point(x, self.dim) - c)), 0.0)


@dataclass(frozen=True)
class LateralDisc:
    """``{level} x B^{(n-1)}_m(center_perp)``."""

    dim: int
    level: float = 1.0
    m: float = 8.0
    center_perp: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("disc radius m must be > 0")

    def distance_from(self, x) -> float:
        x = point(x, self.dim)
        c = np.zeros(self.dim - 1) if self.center_perp is None else np.asarray(self.center_perp)
        lat = max(float(np.linalg.norm(x[1:] - c)) - self.m, 0.0)
        return math.hypot(self.level - x[0], lat)


@dataclass(frozen=True)
class Cylinder:
    """``(a_1, a_1 + delta) x B^{(n-1)}_delta(a_perp)``."""

    a: tuple[float, ...]
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        point(self.a)

    @property
    def dim(self) -> int:
        return len(self.a)

    def distance_from(self, x) -> float:
        x = point(x, self.dim)
        a = np.asarray(self.a)
        lo, hi = a[0], a[0] + self.delta
        dx = max(lo - x[0], 0.0, x[0] - hi)
        lat = max(float(np.linalg.norm(x[1:] - a[1:])) - self.delta, 0.0)
        return math.hypot(dx, lat)


Region = HalfSpace | BallComplement | LateralDisc | Cylinder


def region_to_dict(region) -> dict:
    d = {"kind": type(region).__name__}
    d.update({k: (list(v) if isinstance(v, tuple) else v)
              for k, v in region.__dict__.items()})
    return d


def region_from_dict(d: dict):
    kinds = {c.__name__: c for c in (HalfSpace, BallComplement, LateralDisc, Cylinder)}
    d = dict(d)
    cls = kinds[d.pop("kind")]
    return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})
