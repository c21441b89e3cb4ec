"""Bounded domains, distance to the boundary and the extended boundary.

Signed distances are positive inside the domain. The distance to the
boundary reported by :func:`distance_to_boundary` is zero outside the
closure, which is the only convention the estimators need.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import qmc

from .generator import AllSpace, Dilation, Empty

__all__ = [
    "Domain",
    "Interval",
    "Ball",
    "Box",
    "Implicit",
    "load_sdf_grid",
    "domain_from_dict",
    "distance_to_boundary",
    "ExitClass",
    "ExtendedBoundary",
    "classify_exit",
]


class Domain:
    """Common interface. Subclasses implement ``signed_distance`` and ``project``."""

    dim: int

    def _pts(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or (x.ndim == 1 and self.dim > 1):
            x = x.reshape(1, -1)
        elif x.ndim == 1:
            x = x[:, None]
        if x.shape[-1] != self.dim:
            raise ValueError(f"dimension mismatch: domain is {self.dim}-d, got points of shape {x.shape}")
        return x

    def contains(self, x):
        return self.signed_distance(x) > 0

    def distance(self, x):
        return np.maximum(self.signed_distance(x), 0.0)

    def boundary_distance(self, x):
        """Distance to the boundary set itself, inside or outside."""
        return np.abs(self.signed_distance(x))

    @property
    def diameter(self) -> float:
        lo, hi = self.bounding_box
        return float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))

    def normal(self, x):
        """Outward unit normal at the boundary point nearest to ``x``."""
        x = self._pts(x)
        eps = 1e-7 * max(self.diameter, 1.0)
        grad = np.empty_like(x)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = eps
            grad[:, k] = (self.signed_distance(x + e) - self.signed_distance(x - e)) / (2 * eps)
        norm = np.linalg.norm(grad, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        return -grad / norm

    def sample_box(self, lo, hi, n, seed=0):
        sob = qmc.Sobol(d=self.dim, scramble=True, seed=seed)
        m = max(int(math.ceil(math.log2(max(n, 2)))), 1)
        return qmc.scale(sob.random_base2(m)[:n], np.atleast_1d(lo), np.atleast_1d(hi))

    def sample_interior(self, n, seed=0):
        lo, hi = self.bounding_box
        pts = self.sample_box(lo, hi, max(2 * n, 64), seed=seed)
        return pts[self.contains(pts)][:n]


@dataclass(frozen=True)
class Interval(Domain):
    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("interval needs a < b")

    dim = 1

    @property
    def bounding_box(self):
        return np.array([self.a]), np.array([self.b])

    def signed_distance(self, x):
        x = self._pts(x)[:, 0]
        return np.minimum(x - self.a, self.b - x)

    def project(self, x):
        x = self._pts(x)
        mid = 0.5 * (self.a + self.b)
        return np.where(x < mid, self.a, self.b).astype(float)

    def to_dict(self):
        return {"type": "interval", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Ball(Domain):
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    @property
    def bounding_box(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def signed_distance(self, x):
        x = self._pts(x)
        return self.radius - np.linalg.norm(x - np.asarray(self.center), axis=1)

    def project(self, x):
        x = self._pts(x)
        c = np.asarray(self.center)
        v = x - c
        r = np.linalg.norm(v, axis=1, keepdims=True)
        v = np.where(r > 0, v / np.where(r > 0, r, 1.0), np.eye(self.dim)[0])
        return c + self.radius * v

    def normal(self, x):
        x = self._pts(x)
        v = x - np.asarray(self.center)
        r = np.linalg.norm(v, axis=1, keepdims=True)
        return np.where(r > 0, v / np.where(r > 0, r, 1.0), np.eye(self.dim)[0])

    def to_dict(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box(Domain):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def bounding_box(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def signed_distance(self, x):
        x = self._pts(x)
        lo, hi = self.bounding_box
        inside = np.minimum(x - lo, hi - x).min(axis=1)
        outside = np.linalg.norm(x - np.clip(x, lo, hi), axis=1)
        return np.where(inside > 0, inside, np.where(outside > 0, -outside, inside))

    def project(self, x):
        x = self._pts(x).copy()
        lo, hi = self.bounding_box
        clipped = np.clip(x, lo, hi)
        inside = np.all(clipped == x, axis=1)
        out = clipped
        if np.any(inside):
            xi = x[inside]
            gaps = np.concatenate([xi - lo, hi - xi], axis=1)
            k = gaps.argmin(axis=1)
            rows = np.arange(len(xi))
            axis = k % self.dim
            target = np.where(k < self.dim, lo[axis], hi[axis])
            xi[rows, axis] = target
            out[inside] = xi
        return out

    def to_dict(self):
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


class Implicit(Domain):
    """Domain given by a signed-distance function and a bounding box.

    Connectedness cannot be checked and is taken from the caller.
    """

    def __init__(self, sdf, lo, hi, connected=True, source=None):
        if not connected:
            raise ValueError("only connected domains are supported")
        self.sdf = sdf
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.dim = self.lo.size
        self.source = source

    @property
    def bounding_box(self):
        return self.lo, self.hi

    def signed_distance(self, x):
        return np.asarray(self.sdf(self._pts(x)), dtype=float)

    def project(self, x):
        y = self._pts(x).copy()
        for _ in range(4):
            y = y + self.signed_distance(y)[:, None] * self.normal(y)
        return y

    def to_dict(self):
        if self.source is None:
            raise TypeError("implicit domain without a file source cannot be serialised")
        return {"type": "implicit", "sdf_file": str(self.source), "connected": True}


def load_sdf_grid(path) -> Implicit:
    """Read a tabulated signed-distance grid.

    Format: a header line ``# dims=nx[,ny] spacing=hx[,hy] origin=ox[,oy]``
    followed by the values in row-major order (last axis fastest),
    whitespace separated. Positive values are inside.
    """
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("signed-distance file lacks a header line")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        dims = [int(v) for v in meta["dims"].split(",")]
        spacing = [float(v) for v in meta["spacing"].split(",")]
        origin = [float(v) for v in meta.get("origin", ",".join("0" * len(dims))).split(",")]
        values = np.array(fh.read().split(), dtype=float)
    if values.size != math.prod(dims):
        raise ValueError(f"expected {math.prod(dims)} values, found {values.size}")
    values = values.reshape(dims)
    axes = [o + h * np.arange(m) for o, h, m in zip(origin, spacing, dims)]
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])
    interp = RegularGridInterpolator(axes, values, method="linear")

    def sdf(x):
        clipped = np.clip(x, lo, hi)
        return interp(clipped) - np.linalg.norm(x - clipped, axis=1)

    inside_lo = lo
    inside_hi = hi
    return Implicit(sdf, inside_lo, inside_hi, connected=True, source=path)


def domain_from_dict(cfg) -> Domain:
    kind = cfg["type"]
    if kind == "interval":
        return Interval(float(cfg["a"]), float(cfg["b"]))
    if kind == "ball":
        return Ball(tuple(cfg["center"]), float(cfg["radius"]))
    if kind == "box":
        return Box(tuple(cfg["lo"]), tuple(cfg["hi"]))
    if kind == "implicit":
        if not cfg.get("connected", True):
            raise ValueError("only connected domains are supported")
        return load_sdf_grid(cfg["sdf_file"])
    raise ValueError(f"unknown domain type {kind!r}")


def distance_to_boundary(domain: Domain, x):
    """delta_D(x); zero outside the closure. Scalar in, scalar out."""
    arr = np.asarray(x, dtype=float)
    d = domain.distance(arr)
    if arr.ndim == 0 or (arr.ndim == 1 and (domain.dim > 1 or arr.size == 1)):
        return float(d[0])
    return d


# ---------------------------------------------------------------------------
# extended boundary


class ExitClass(enum.IntEnum):
    NONE = -1  # path censored, no exit
    ON_BOUNDARY = 0
    EXTERIOR_RANGE = 1
    OUTSIDE_RANGE = 2


class ExtendedBoundary:
    """dD together with the part of the range of non-locality outside D."""

    def __init__(self, domain: Domain, support, eps_geom=None):
        self.domain = domain
        self.support = support
        self.eps_geom = 1e-9 * domain.diameter if eps_geom is None else float(eps_geom)

    @property
    def equals_boundary(self) -> bool:
        return isinstance(self.support, Empty)

    def classify(self, y):
        """Vectorised classification of exit positions."""
        sd = self.domain.signed_distance(y)
        on = np.abs(sd) <= self.eps_geom
        if isinstance(self.support, AllSpace):
            ext = sd < 0
        elif isinstance(self.support, Dilation):
            # exterior point within jump reach of D
            ext = (sd < 0) & (-sd <= self.support.radius + self.eps_geom)
        else:
            ext = np.zeros_like(on)
        out = np.full(sd.shape, int(ExitClass.OUTSIDE_RANGE), dtype=np.int8)
        out[ext] = int(ExitClass.EXTERIOR_RANGE)
        out[on] = int(ExitClass.ON_BOUNDARY)
        return out


def classify_exit(eb: ExtendedBoundary, y) -> ExitClass:
    return ExitClass(int(eb.classify(np.atleast_1d(np.asarray(y, dtype=float)))[0]))
