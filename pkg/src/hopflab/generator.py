"""Lévy-type generators: coefficients, jump kernels, Fourier symbol and
exit-time certificates.

The operator acting on a bounded C^2 function u is

    A u(x) = 1/2 sum_kl q_kl(x) d_k d_l u(x) + b(x) . grad u(x)
             + int (u(x+y) - u(x) - y . grad u(x) / (1 + |y|^2)) N(x, dy)

with killing rate c(x) >= 0 and source g(x) <= 0 carried alongside for the
equation (-A + c) v = g.

All coefficient callables are vectorised: they take an ``(n, d)`` array of
points and return ``(n, d, d)``, ``(n, d)`` or ``(n,)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate, special
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import qmc

__all__ = [
    "Constant",
    "Tabulated",
    "Function",
    "as_field",
    "NoJumps",
    "IsotropicStable",
    "CompoundPoisson",
    "uniform_ball_jumps",
    "GeneratorSpec",
    "EstimationError",
    "stable_constant",
    "sphere_area",
    "levy_mass",
    "levy_mass_quadrature",
    "operator_bound",
    "coefficient_bounds",
    "symbol",
    "et_certificate_symbol",
    "et_certificate_jump",
    "Empty",
    "AllSpace",
    "Dilation",
    "range_of_nonlocality",
    "generator_apply",
    "compensator_drift",
]


class EstimationError(RuntimeError):
    """A numerical estimate could not be brought to the requested accuracy."""


# ---------------------------------------------------------------------------
# coefficient fields


def _points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, dim) if dim > 1 or x.size != 1 else x.reshape(1, 1)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


class Constant:
    """Spatially constant coefficient."""

    def __init__(self, value, shape=()):
        self.shape = tuple(shape)
        self.value = np.broadcast_to(np.asarray(value, dtype=float), self.shape).copy()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[0] if x.ndim > 1 else 1
        return np.broadcast_to(self.value, (n,) + self.shape)

    def to_dict(self):
        return self.value.tolist()

    def __repr__(self):
        return f"Constant({self.value.tolist()!r})"


class Tabulated:
    """Coefficient given on a regular grid, multilinear interpolation.

    ``values`` has shape ``grid_shape + shape``; points outside the table are
    clamped to its bounding box.
    """

    def __init__(self, lo, spacing, values, shape=()):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.spacing = np.atleast_1d(np.asarray(spacing, dtype=float))
        self.shape = tuple(shape)
        vals = np.asarray(values, dtype=float)
        grid_shape = vals.shape[: vals.ndim - len(self.shape)]
        if len(grid_shape) != self.lo.size:
            raise ValueError("table rank does not match its origin")
        self.values = vals
        axes = [lo_i + h_i * np.arange(m) for lo_i, h_i, m in zip(self.lo, self.spacing, grid_shape)]
        self._hi = np.array([a[-1] for a in axes])
        self._interp = RegularGridInterpolator(axes, vals, method="linear")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        x = np.clip(x.reshape(-1, self.lo.size), self.lo, self._hi)
        return self._interp(x)

    def to_dict(self):
        return {
            "table": {
                "lo": self.lo.tolist(),
                "spacing": self.spacing.tolist(),
                "values": self.values.tolist(),
            }
        }


class Function:
    """Arbitrary vectorised callable. Not serialisable unless ``name`` is set."""

    def __init__(self, fn, shape=(), name=None):
        self.fn = fn
        self.shape = tuple(shape)
        self.name = name

    def __call__(self, x):
        out = np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)
        n = np.asarray(x).shape[0]
        return np.broadcast_to(out, (n,) + self.shape)

    def to_dict(self):
        if self.name is None:
            raise TypeError("anonymous Function coefficients cannot be serialised")
        return {"function": self.name}


Field = Union[Constant, Tabulated, Function]


def as_field(value, shape=()) -> Field:
    if isinstance(value, (Constant, Tabulated, Function)):
        return value
    if value is None:
        return Constant(0.0, shape)
    if callable(value):
        return Function(value, shape)
    if isinstance(value, dict) and "table" in value:
        t = value["table"]
        return Tabulated(t["lo"], t["spacing"], t["values"], shape)
    return Constant(value, shape)


# ---------------------------------------------------------------------------
# jump kernels


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def stable_constant(d: int, s: float) -> float:
    """Normalising constant making the symbol of the stable kernel |xi|^s."""
    return 2.0**s * math.gamma((d + s) / 2) / (math.pi ** (d / 2) * abs(math.gamma(-s / 2)))


@dataclass(frozen=True)
class NoJumps:
    def to_dict(self):
        return {"type": "none"}


@dataclass(frozen=True)
class IsotropicStable:
    """N(x, dy) = scale * C(d, s) |y|^{-d-s} dy, symbol scale * |xi|^s."""

    order: float
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.order < 2.0:
            raise ValueError(f"stable order must lie in (0, 2), got {self.order}")
        if self.scale <= 0:
            raise ValueError("stable scale must be positive")

    def density_constant(self, d):
        return self.scale * stable_constant(d, self.order)

    def to_dict(self):
        return {"type": "isotropic_stable", "order": self.order, "scale": self.scale}


@dataclass(frozen=True)
class CompoundPoisson:
    """Finite jump measure N(x, dy) = rate(x) * mu(dy).

    ``transform`` maps an ``(n, n_uniforms)`` array of uniforms to ``(n, d)``
    jumps distributed as mu; ``support_radius`` bounds |J|. ``density`` (a
    vectorised callable on jump vectors) is optional and only needed by the
    grid discretisation.
    """

    rate: Field
    transform: Callable
    n_uniforms: int
    support_radius: float
    density: Optional[Callable] = None
    name: Optional[str] = None
    params: dict = field(default_factory=dict)

    def to_dict(self):
        rate = self.rate.to_dict() if hasattr(self.rate, "to_dict") else self.rate
        if self.name is None:
            raise TypeError("anonymous jump laws cannot be serialised")
        return {"type": "compound_poisson", "rate": rate, "jumps": {"type": self.name, **self.params}}


def uniform_ball_jumps(radius: float, dim: int, rate=1.0) -> CompoundPoisson:
    """Compound Poisson kernel with jumps uniform in the ball B(0, radius)."""
    radius = float(radius)
    vol = math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * radius**dim

    if dim == 1:

        def transform(u):
            return radius * (2.0 * u[:, :1] - 1.0)

        n_u = 1
    else:

        def transform(u):
            g = special.ndtri(u[:, :dim])
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            return g * (radius * u[:, dim : dim + 1] ** (1.0 / dim))

        n_u = dim + 1

    def density(y):
        y = np.asarray(y, dtype=float).reshape(-1, dim)
        return np.where(np.linalg.norm(y, axis=1) <= radius, 1.0 / vol, 0.0)

    return CompoundPoisson(
        rate=as_field(rate),
        transform=transform,
        n_uniforms=n_u,
        support_radius=radius,
        density=density,
        name="uniform_ball",
        params={"radius": radius},
    )


LevyKernelModel = Union[NoJumps, IsotropicStable, CompoundPoisson]


# ---------------------------------------------------------------------------
# the generator


@dataclass(frozen=True)
class GeneratorSpec:
    """Coefficients of the operator together with killing and source terms."""

    dim: int
    diffusion: Field = None
    drift: Field = None
    levy: LevyKernelModel = NoJumps()
    killing: Field = None
    source: Field = None

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise ValueError("dimension must be >= 1")
        object.__setattr__(self, "dim", d)
        diff = self.diffusion
        if diff is not None and not callable(diff) and not isinstance(diff, dict):
            q = np.asarray(diff, dtype=float)
            if q.ndim == 0:
                diff = q * np.eye(d)
            elif q.ndim == 1:
                diff = np.diag(q)
        object.__setattr__(self, "diffusion", as_field(diff, (d, d)))
        object.__setattr__(self, "drift", as_field(self.drift, (d,)))
        object.__setattr__(self, "killing", as_field(self.killing, ()))
        object.__setattr__(self, "source", as_field(self.source, ()))
        if self.levy is None:
            object.__setattr__(self, "levy", NoJumps())

    # convenience constructors -------------------------------------------------
    @classmethod
    def brownian(cls, dim=1, killing=0.0, source=0.0):
        """Standard Brownian motion, generator 1/2 Laplacian."""
        return cls(dim, diffusion=1.0, killing=killing, source=source)

    @classmethod
    def stable(cls, order, dim=1, scale=1.0, killing=0.0, source=0.0):
        return cls(dim, levy=IsotropicStable(order, scale), killing=killing, source=source)

    def replace(self, **changes):
        kw = dict(
            dim=self.dim,
            diffusion=self.diffusion,
            drift=self.drift,
            levy=self.levy,
            killing=self.killing,
            source=self.source,
        )
        kw.update(changes)
        return GeneratorSpec(**kw)

    @property
    def has_diffusion(self):
        q = self.diffusion
        return not (isinstance(q, Constant) and not np.any(q.value))

    @property
    def has_drift(self):
        b = self.drift
        return not (isinstance(b, Constant) and not np.any(b.value))

    @property
    def has_killing(self):
        c = self.killing
        return not (isinstance(c, Constant) and float(c.value) == 0.0)

    @property
    def has_source(self):
        g = self.source
        return not (isinstance(g, Constant) and float(g.value) == 0.0)

    def validate(self, points):
        """Check the pointwise hypotheses at the given ``(n, d)`` points."""
        x = _points(points, self.dim)
        q = self.diffusion(x)
        if not np.allclose(q, np.swapaxes(q, -1, -2)):
            raise ValueError("diffusion matrix is not symmetric")
        if np.linalg.eigvalsh(q).min() < -1e-12:
            raise ValueError("diffusion matrix is not positive semi-definite")
        if np.any(self.killing(x) < 0):
            raise ValueError("killing rate must be non-negative")
        if np.any(self.source(x) > 0):
            raise ValueError("source must be non-positive")
        for name, arr in (("diffusion", q), ("drift", self.drift(x)), ("killing", self.killing(x))):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} is not finite")
        return True

    def to_dict(self):
        return {
            "dim": self.dim,
            "diffusion": self.diffusion.to_dict(),
            "drift": self.drift.to_dict(),
            "levy": self.levy.to_dict(),
            "killing": self.killing.to_dict(),
            "source": self.source.to_dict(),
        }

    @classmethod
    def from_dict(cls, cfg):
        d = int(cfg["dim"])
        levy_cfg = cfg.get("levy", {"type": "none"})
        kind = levy_cfg.get("type", "none")
        if kind == "none":
            levy = NoJumps()
        elif kind == "isotropic_stable":
            levy = IsotropicStable(float(levy_cfg["order"]), float(levy_cfg.get("scale", 1.0)))
        elif kind == "compound_poisson":
            jumps = levy_cfg["jumps"]
            if jumps.get("type") != "uniform_ball":
                raise ValueError(f"unknown jump law {jumps.get('type')!r}")
            levy = uniform_ball_jumps(jumps["radius"], d, rate=as_field(levy_cfg.get("rate", 1.0)))
        else:
            raise ValueError(f"unknown Lévy kernel {kind!r}")
        return cls(
            d,
            diffusion=cfg.get("diffusion", 0.0),
            drift=cfg.get("drift", 0.0),
            levy=levy,
            killing=cfg.get("killing", 0.0),
            source=cfg.get("source", 0.0),
        )


# ---------------------------------------------------------------------------
# kernel masses and operator bounds


def levy_mass(spec: GeneratorSpec, points=None) -> float:
    """N_* = sup_x int min(1, |y|^2) N(x, dy) in closed form."""
    levy, d = spec.levy, spec.dim
    if isinstance(levy, NoJumps):
        return 0.0
    if isinstance(levy, IsotropicStable):
        s = levy.order
        return levy.density_constant(d) * sphere_area(d) * (1.0 / (2.0 - s) + 1.0 / s)
    second = _cp_moment(levy, lambda y: np.minimum(1.0, np.sum(y * y, axis=1)))
    rate = _sup_field(levy.rate, points, d)
    return rate * second


def levy_mass_quadrature(spec: GeneratorSpec) -> float:
    """N_* for the stable kernel by radial quadrature (independent of the closed form)."""
    levy, d = spec.levy, spec.dim
    if not isinstance(levy, IsotropicStable):
        return levy_mass(spec)
    s = levy.order
    dens = levy.density_constant(d) * sphere_area(d)
    inner, _ = integrate.quad(lambda r: r**2 * r ** (-1.0 - s), 0.0, 1.0, epsabs=0, epsrel=1e-12)
    outer, _ = integrate.quad(lambda r: r ** (-1.0 - s), 1.0, np.inf, epsabs=0, epsrel=1e-12)
    return dens * (inner + outer)


def _sup_field(f, points, d):
    if isinstance(f, Constant):
        return float(np.max(np.abs(f.value)))
    if points is None:
        raise ValueError("probe points required for a non-constant coefficient")
    return float(np.max(np.abs(f(_points(points, d)))))


def operator_bound(spec: GeneratorSpec, points=None) -> float:
    """M_A = sum ||q_ij|| + sum ||b_i|| + N_* (sup norms over the probes)."""
    d = spec.dim
    if isinstance(spec.diffusion, Constant):
        q = np.abs(spec.diffusion.value)
    else:
        q = np.abs(spec.diffusion(_points(points, d))).max(axis=0)
    if isinstance(spec.drift, Constant):
        b = np.abs(spec.drift.value)
    else:
        b = np.abs(spec.drift(_points(points, d))).max(axis=0)
    return float(q.sum() + b.sum() + levy_mass(spec, points))


def coefficient_bounds(spec: GeneratorSpec, domain, n_probe: int = 2001) -> dict:
    """sup/inf of c and g over D (exact for constants, probe scan otherwise)."""
    fields = {"c": spec.killing, "g": spec.source}
    out = {}
    pts = None
    for key, f in fields.items():
        if isinstance(f, Constant):
            vals = np.atleast_1d(f.value)
        else:
            if pts is None:
                pts = domain.sample_interior(n_probe)
            vals = f(pts)
        out[f"{key}_sup"] = float(np.max(vals))
        out[f"{key}_inf"] = float(np.min(vals))
    out["g_minus_inf"] = float(max(-out["g_sup"], 0.0))
    return out


# ---------------------------------------------------------------------------
# Fourier symbol


_QMC_POINTS = 2**14


def _cp_moment(levy: CompoundPoisson, fn, n=_QMC_POINTS, rel_tol=1e-3):
    """E fn(J) by scrambled Sobol quadrature; raises if the two halves disagree."""
    sob = qmc.Sobol(d=levy.n_uniforms, scramble=True, seed=20240229)
    u = sob.random(n)
    u = np.clip(u, 1e-15, 1 - 1e-15)
    vals = np.asarray(fn(levy.transform(u)))
    full = vals.mean(axis=0)
    half = vals[: n // 2].mean(axis=0)
    if np.any(np.abs(full - half) > rel_tol * (1e-3 + np.abs(full))):
        raise EstimationError("jump-law quadrature did not converge")
    return full


def symbol(spec: GeneratorSpec, x, xi):
    """Fourier symbol p(x, xi); ``xi`` may be a single vector or an (m, d) array."""
    d = spec.dim
    x = _points(x, d)[:1]
    xi_arr = np.asarray(xi, dtype=float)
    single = xi_arr.ndim <= 1 and (d > 1 or xi_arr.size == 1)
    xi_arr = xi_arr.reshape(-1, d)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi_arr))):
        raise ValueError("symbol requires finite x and xi")
    q = spec.diffusion(x)[0]
    b = spec.drift(x)[0]
    p = 0.5 * np.einsum("mi,ij,mj->m", xi_arr, q, xi_arr) - 1j * (xi_arr @ b)
    levy = spec.levy
    if isinstance(levy, IsotropicStable):
        p = p + levy.scale * np.linalg.norm(xi_arr, axis=1) ** levy.order
    elif isinstance(levy, CompoundPoisson):
        rate = float(levy.rate(x)[0])

        def integrand(y):
            phase = y @ xi_arr.T
            comp = (y @ xi_arr.T) / (1.0 + np.sum(y * y, axis=1))[:, None]
            return 1.0 - np.exp(1j * phase) + 1j * comp

        p = p + rate * _cp_moment(levy, integrand)
    return complex(p[0]) if single else p


def _directions(d, m=64):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = 2 * np.pi * (np.arange(m) + 0.5) / m
        return np.column_stack([np.cos(th), np.sin(th)])
    # Fibonacci lattice on S^{d-1} for d = 3; Gaussian-normalised otherwise
    if d == 3:
        k = np.arange(m) + 0.5
        z = 1 - 2 * k / m
        r = np.sqrt(1 - z * z)
        phi = np.pi * (1 + 5**0.5) * k
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    g = np.random.default_rng(7).standard_normal((m, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _inf_re_symbol(spec, xi, probes):
    vals = np.stack([symbol(spec, z, xi).real for z in probes])
    return vals.min(axis=0)


def et_certificate_symbol(spec: GeneratorSpec, r: float, probes=None) -> dict:
    """Finiteness of int_{|xi|<=r} dxi / inf_z Re p(z, xi).

    The infimum over z runs over ``probes`` (default: the origin, exact for
    constant coefficients). A divergent integral is reported as inconclusive,
    never as a refutation of finite exit times.
    """
    d = spec.dim
    if r <= 0:
        raise ValueError("r must be positive")
    probes = np.zeros((1, d)) if probes is None else _points(probes, d)
    dirs = _directions(d)
    area = sphere_area(d)

    def radial(rho):
        rho = np.atleast_1d(rho)
        out = np.empty(rho.shape)
        for i, p in enumerate(rho):
            re = _inf_re_symbol(spec, p * dirs, probes)
            out[i] = np.inf if np.any(re <= 0) else area * p ** (d - 1) * np.mean(1.0 / re)
        return out

    inconclusive = {"certified": False, "integral": math.inf, "status": "inconclusive"}
    grid = r * np.logspace(-8, 0, 33)
    vals = radial(grid)
    if not np.all(np.isfinite(vals)):
        return inconclusive
    # local power law of the integrand at the origin: integrable iff exponent > -1
    slope = np.polyfit(np.log(grid[:6]), np.log(vals[:6]), 1)[0]
    if slope <= -1.0 + 1e-3:
        return {**inconclusive, "exponent_at_zero": float(slope)}
    total, err = integrate.quad(lambda p: radial(p)[0], 0.0, r, points=list(grid[1:-1:4]), limit=200)
    if not np.isfinite(total):
        return inconclusive
    return {"certified": True, "integral": float(total), "status": "certified", "exponent_at_zero": float(slope)}


def et_certificate_jump(spec: GeneratorSpec, domain) -> bool:
    """inf over the relevant ball of the kernel mass beyond 3 * diam(D) is positive."""
    levy, d = spec.levy, spec.dim
    r = domain.diameter
    if isinstance(levy, NoJumps):
        return False
    if isinstance(levy, IsotropicStable):
        tail = levy.density_constant(d) * sphere_area(d) * (3 * r) ** (-levy.order) / levy.order
        return tail > 0
    if levy.support_radius < 3 * r:
        return False
    frac = float(_cp_moment(levy, lambda y: (np.linalg.norm(y, axis=1) >= 3 * r).astype(float)))
    if isinstance(levy.rate, Constant):
        rate_inf = float(levy.rate.value)
    else:
        lo, hi = domain.bounding_box
        pts = domain.sample_box(np.asarray(lo) - r, np.asarray(hi) + r, 4096)
        rate_inf = float(levy.rate(pts).min())
    return rate_inf * frac > 0


# ---------------------------------------------------------------------------
# range of non-locality


@dataclass(frozen=True)
class Empty:
    def to_dict(self):
        return {"kind": "empty"}


@dataclass(frozen=True)
class AllSpace:
    def to_dict(self):
        return {"kind": "all_space"}


@dataclass(frozen=True)
class Dilation:
    radius: float

    def to_dict(self):
        return {"kind": "dilation", "radius": self.radius}


SupportDescriptor = Union[Empty, AllSpace, Dilation]


def compensator_drift(spec: GeneratorSpec, x):
    """Drift correction -int y/(1+|y|^2) N(x, dy) turning raw jumps into A.

    Zero for symmetric kernels.
    """
    levy = spec.levy
    x = _points(x, spec.dim)
    if not isinstance(levy, CompoundPoisson):
        return np.zeros_like(x)
    return -levy.rate(x)[:, None] * compensator_moment(levy)[None, :]


def compensator_moment(levy: CompoundPoisson):
    """E[J / (1 + |J|^2)] for the jump law; exactly zero when it vanishes to quadrature accuracy."""
    m = _cp_moment(levy, lambda y: y / (1.0 + np.sum(y * y, axis=1))[:, None], rel_tol=1e-2)
    return np.where(np.abs(m) < 1e-3 * levy.support_radius, 0.0, m)


def range_of_nonlocality(spec: GeneratorSpec, domain=None) -> SupportDescriptor:
    """Set of points reachable from D by a single jump."""
    levy = spec.levy
    if isinstance(levy, NoJumps):
        return Empty()
    if isinstance(levy, IsotropicStable):
        return AllSpace()
    return Dilation(float(levy.support_radius))


# ---------------------------------------------------------------------------
# numerical generator action (used by martingale checks)


def generator_apply(spec: GeneratorSpec, f, x, h: float = 1e-4):
    """A f at points ``x`` by finite differences and jump quadrature.

    ``f`` is a vectorised callable on (n, d) arrays. The stable part is only
    supported in d = 1 (radial quadrature).
    """
    d = spec.dim
    x = _points(x, d)
    fx = f(x)
    q = spec.diffusion(x)
    b = spec.drift(x)
    out = np.zeros(len(x))
    eye = np.eye(d)
    grad = np.empty((len(x), d))
    for k in range(d):
        ek = h * eye[k]
        grad[:, k] = (f(x + ek) - f(x - ek)) / (2 * h)
        out += b[:, k] * grad[:, k]
        for m in range(d):
            em = h * eye[m]
            if k == m:
                hess = (f(x + ek) - 2 * fx + f(x - ek)) / h**2
            else:
                hess = (f(x + ek + em) - f(x + ek - em) - f(x - ek + em) + f(x - ek - em)) / (4 * h * h)
            out += 0.5 * q[:, k, m] * hess
    levy = spec.levy
    if isinstance(levy, IsotropicStable):
        if d != 1:
            raise NotImplementedError("stable generator quadrature only in d = 1")
        cst = levy.density_constant(1)
        s = levy.order
        for i, xi in enumerate(x[:, 0]):
            def sym(y, xi=xi):
                pt = np.array([[xi + y], [xi - y]])
                return (f(pt).sum() - 2 * fx[i]) * y ** (-1.0 - s)

            near, _ = integrate.quad(sym, 0.0, 1.0, limit=200)
            far, _ = integrate.quad(sym, 1.0, np.inf, limit=200)
            out[i] += cst * (near + far)
    elif isinstance(levy, CompoundPoisson):
        rate = levy.rate(x)
        for i in range(len(x)):
            xi = x[i : i + 1]
            def incr(y, xi=xi, gi=grad[i]):
                return f(xi + y) - fx[i] - (y @ gi) / (1.0 + np.sum(y * y, axis=1))

            jump = _cp_moment(levy, incr)
            out[i] += rate[i] * float(jump)
    return out
