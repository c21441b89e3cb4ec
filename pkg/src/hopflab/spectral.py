"""Grid discretisation of the generator with null exterior condition.

Nodes are the points of a uniform lattice (spacing h) lying inside D; the
reference measure is Lebesgue measure, so every node carries weight h^d.
The generator matrix L acts on node vectors with u = 0 off D. Nonlocal
terms use a cell quadrature: lattice offset j carries the kernel mass of the
cell around j*h, the central cell is handled by second-order Taylor
expansion, and the mass of all cells outside D multiplies -u(x).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, linalg
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import LinearOperator, eigs

from .domain import Domain, Interval
from .generator import CompoundPoisson, GeneratorSpec, IsotropicStable, NoJumps

__all__ = [
    "GridOperator",
    "EigenPair",
    "GridError",
    "discretize",
    "principal_eigenpair",
    "heat_kernel",
    "transition_matrix",
    "iu_ratio",
    "boundary_scaling_fit",
    "yosida_monotone_check",
    "stable_cell_weights_1d",
]


class GridError(RuntimeError):
    pass


@dataclass
class GridOperator:
    """Generator matrix on interior lattice nodes.

    ``lattice_index`` maps each node to its integer lattice coordinates
    relative to ``origin`` (used for interpolation).
    """

    L: np.ndarray
    nodes: np.ndarray
    h: float
    killing: np.ndarray
    source: np.ndarray
    origin: np.ndarray
    lattice_index: np.ndarray
    lattice_shape: tuple
    spec: Optional[GeneratorSpec] = field(default=None, repr=False)
    domain: Optional[Domain] = field(default=None, repr=False)

    @classmethod
    def from_matrix(cls, L, h=1.0, nodes=None, killing=None):
        """Wrap an arbitrary generator matrix (1-d lattice layout)."""
        L = np.asarray(L, dtype=float)
        M = L.shape[0]
        nodes = np.arange(1, M + 1, dtype=float)[:, None] * h if nodes is None else np.asarray(nodes, float)
        return cls(
            L=L,
            nodes=nodes.reshape(M, -1),
            h=float(h),
            killing=np.zeros(M) if killing is None else np.asarray(killing, float),
            source=np.zeros(M),
            origin=np.zeros(nodes.reshape(M, -1).shape[1]),
            lattice_index=np.arange(1, M + 1)[:, None],
            lattice_shape=(M + 2,),
        )

    @property
    def size(self):
        return self.L.shape[0]

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def weight(self):
        return self.h**self.dim

    def integrate(self, values):
        return float(np.sum(values) * self.weight)

    def killed(self, killed=True):
        """Generator matrix including -c when ``killed``."""
        return self.L - np.diag(self.killing) if killed else self.L

    def resolvent_matrix(self, alpha, killed=False):
        """Matrix of R_alpha acting on node vectors: (alpha - L [+ c])^{-1}."""
        M = self.size
        return linalg.solve(alpha * np.eye(M) - self.killed(killed), np.eye(M))

    def resolvent(self, alpha, f, killed=False):
        M = self.size
        return linalg.solve(alpha * np.eye(M) - self.killed(killed), np.asarray(f, dtype=float))

    def gauge(self):
        """Grid gauge function v = 1 - w with (c - L) w = c."""
        if not np.any(self.killing):
            return np.ones(self.size)
        w = linalg.solve(np.diag(self.killing) - self.L, self.killing)
        return 1.0 - w

    def evaluate(self, fn):
        return np.asarray(fn(self.nodes), dtype=float).reshape(self.size)

    def interpolate(self, values, x):
        """Piecewise-linear interpolant of node values, zero outside D."""
        values = np.asarray(values, dtype=float)
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        full = np.zeros(self.lattice_shape)
        full[tuple(self.lattice_index.T)] = values
        axes = [self.origin[k] + self.h * np.arange(self.lattice_shape[k]) for k in range(self.dim)]
        interp = RegularGridInterpolator(axes, full, method="linear", bounds_error=False, fill_value=0.0)
        out = interp(x)
        if self.domain is not None:
            out = np.where(self.domain.contains(x), out, 0.0)
        return out


@dataclass
class EigenPair:
    """Principal eigenpair; phi and phi_hat are densities with unit mass."""

    lam: float
    phi: np.ndarray
    phi_hat: np.ndarray
    nodes: np.ndarray
    h: float
    gap: Optional[float] = None
    iterations: int = 0
    residual: float = 0.0

    @property
    def weight(self):
        return self.h ** self.nodes.shape[1]

    @property
    def phi_sup(self):
        return float(self.phi.max())

    @property
    def overlap(self):
        """int phi phi_hat dm."""
        return float(np.sum(self.phi * self.phi_hat) * self.weight)


# ---------------------------------------------------------------------------
# assembly


def stable_cell_weights_1d(order, const, h, offsets):
    """Kernel mass const * int |y|^{-1-s} over the cells (|j| -+ 1/2) h."""
    j = np.abs(np.asarray(offsets, dtype=float))
    s = order
    return const / s * (((j - 0.5) * h) ** (-s) - ((j + 0.5) * h) ** (-s))


def _square_radius(theta, half):
    return half / np.maximum(np.abs(np.cos(theta)), np.abs(np.sin(theta)))


def _stable_2d_constants(order, const, h):
    s = order
    half = h / 2
    m_out, _ = integrate.quad(lambda th: _square_radius(th, half) ** (-s) / s, 0, 2 * np.pi, limit=200,
                              points=[np.pi / 4 * k for k in range(1, 8)])
    taylor, _ = integrate.quad(
        lambda th: np.cos(th) ** 2 * _square_radius(th, half) ** (2 - s) / (2 - s), 0, 2 * np.pi, limit=200,
        points=[np.pi / 4 * k for k in range(1, 8)],
    )
    return const * m_out, 0.5 * const * taylor


def _stable_2d_weights(order, const, h, offsets):
    """Cell masses for 2-d lattice offsets by 4x4 Gauss-Legendre per cell."""
    g, w = np.polynomial.legendre.leggauss(4)
    g = 0.5 * h * g
    w = 0.5 * h * w
    off = np.asarray(offsets, dtype=float) * h
    tot = np.zeros(len(off))
    for gi, wi in zip(g, w):
        for gj, wj in zip(g, w):
            r = np.hypot(off[:, 0] + gi, off[:, 1] + gj)
            tot += wi * wj * r ** (-2.0 - order)
    return const * tot


def _lattice(domain, h):
    lo, hi = domain.bounding_box
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    counts = np.floor((hi - lo) / h + 1e-9).astype(int)
    shape = tuple(int(c) + 1 for c in counts)
    grids = np.meshgrid(*[np.arange(m) for m in shape], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    pts = lo + h * idx
    inside = domain.signed_distance(pts) > 1e-9 * h
    return lo, shape, idx[inside], pts[inside]


def discretize(spec: GeneratorSpec, domain: Domain, h: float, min_nodes: int = 50) -> GridOperator:
    """Assemble the generator matrix on the interior lattice nodes of D."""
    d = spec.dim
    if d > 2:
        raise GridError("the grid oracle supports d <= 2 only")
    if d != domain.dim:
        raise ValueError("operator and domain dimensions differ")
    origin, shape, idx, nodes = _lattice(domain, h)
    M = len(nodes)
    span = (idx.max(axis=0) - idx.min(axis=0) + 1) if M else np.zeros(d, int)
    if M == 0 or np.min(span) < min_nodes:
        raise GridError(f"h = {h} is too coarse: {span.tolist()} interior nodes per dimension")
    lookup = -np.ones(shape, dtype=np.int64)
    lookup[tuple(idx.T)] = np.arange(M)

    def neighbour(offset):
        tgt = idx + np.asarray(offset)
        ok = np.all((tgt >= 0) & (tgt < np.asarray(shape)), axis=1)
        out = -np.ones(M, dtype=np.int64)
        out[ok] = lookup[tuple(tgt[ok].T)]
        return out

    L = np.zeros((M, M))
    rows = np.arange(M)

    def add(col, coef):
        ok = col >= 0
        np.add.at(L, (rows[ok], col[ok]), coef[ok] if np.ndim(coef) else coef)

    q = np.asarray(spec.diffusion(nodes)).reshape(M, d, d)
    b = np.asarray(spec.drift(nodes)).reshape(M, d)
    eye = np.eye(d, dtype=int)
    for k in range(d):
        up, dn = neighbour(eye[k]), neighbour(-eye[k])
        diag_coef = 0.5 * q[:, k, k] / h**2
        add(up, diag_coef)
        add(dn, diag_coef)
        L[rows, rows] -= 2 * diag_coef
        add(up, b[:, k] / (2 * h))
        add(dn, -b[:, k] / (2 * h))
        for m_ in range(k + 1, d):
            cross = q[:, k, m_] / (4 * h * h)
            add(neighbour(eye[k] + eye[m_]), cross)
            add(neighbour(-eye[k] - eye[m_]), cross)
            add(neighbour(eye[k] - eye[m_]), -cross)
            add(neighbour(-eye[k] + eye[m_]), -cross)

    levy = spec.levy
    if isinstance(levy, IsotropicStable):
        const = levy.density_constant(d)
        s = levy.order
        offsets = idx[None, :, :] - idx[:, None, :]
        nz = np.any(offsets != 0, axis=2)
        if d == 1:
            m_out = 2 * const / s * (h / 2) ** (-s)
            taylor = const * (h / 2) ** (2 - s) / (2 - s)
            W = np.zeros((M, M))
            W[nz] = stable_cell_weights_1d(s, const, h, offsets[nz][:, 0])
        else:
            m_out, taylor = _stable_2d_constants(s, const, h)
            uniq, inv = np.unique(np.abs(offsets.reshape(-1, 2)), axis=0, return_inverse=True)
            wu = np.zeros(len(uniq))
            nzu = np.any(uniq != 0, axis=1)
            wu[nzu] = _stable_2d_weights(s, const, h, uniq[nzu])
            W = wu[inv.ravel()].reshape(M, M)
        L += W
        L[rows, rows] -= m_out
        for k in range(d):
            up, dn = neighbour(eye[k]), neighbour(-eye[k])
            add(up, np.full(M, taylor / h**2))
            add(dn, np.full(M, taylor / h**2))
            L[rows, rows] -= 2 * taylor / h**2
    elif isinstance(levy, CompoundPoisson):
        if levy.density is None:
            raise GridError("compound Poisson kernel without a density cannot be discretised")
        rate = np.asarray(levy.rate(nodes), dtype=float).reshape(M)
        reach = int(math.ceil(levy.support_radius / h)) + 1
        offs = np.stack(np.meshgrid(*[np.arange(-reach, reach + 1)] * d, indexing="ij"), -1).reshape(-1, d)
        offs = offs[np.any(offs != 0, axis=1)]
        mass = np.asarray(levy.density(offs * h), dtype=float) * h**d
        total = mass.sum()
        table = {tuple(o): m for o, m in zip(offs.tolist(), mass) if m > 0}
        offsets = idx[None, :, :] - idx[:, None, :]
        W = np.zeros((M, M))
        for i in range(M):
            for jn in range(M):
                if jn != i:
                    W[i, jn] = table.get(tuple(offsets[i, jn]), 0.0)
        L += rate[:, None] * W
        L[rows, rows] -= rate * total
    elif not isinstance(levy, NoJumps):
        raise GridError(f"kernel {type(levy).__name__} is not supported on the grid")

    return GridOperator(
        L=L,
        nodes=nodes,
        h=float(h),
        killing=np.asarray(spec.killing(nodes), dtype=float).reshape(M).copy(),
        source=np.asarray(spec.source(nodes), dtype=float).reshape(M).copy(),
        origin=origin,
        lattice_index=idx,
        lattice_shape=shape,
        spec=spec,
        domain=domain,
    )


# ---------------------------------------------------------------------------
# spectral quantities


def _power(lu, v, trans, shift, tol, max_iter):
    lam_old = np.inf
    v = v / v.sum()
    lam = np.nan
    for it in range(1, max_iter + 1):
        w = linalg.lu_solve(lu, v, trans=trans)
        mu = w.sum() / v.sum()
        lam = 1.0 / mu - shift
        v = w / w.sum()
        if abs(lam - lam_old) <= tol * max(abs(lam), 1e-300):
            return lam, v, it
        lam_old = lam
    raise GridError(f"inverse power iteration did not converge in {max_iter} steps")


def _rayleigh(L, phi, phi_hat):
    return float(-(phi_hat @ L @ phi) / (phi_hat @ phi))


def _polish(L, lu, v, lam, trans, shift, tol=1e-12, max_iter=500):
    for _ in range(max_iter):
        if np.max(np.abs(L @ v + lam * v)) <= tol * np.max(np.abs(v)):
            break
        w = linalg.lu_solve(lu, v, trans=trans)
        lam = 1.0 / (w.sum() / v.sum()) - shift
        v = w / w.sum()
    return v


def principal_eigenpair(gop: GridOperator, shift: float = 1e-6, tol: float = 1e-10,
                        max_iter: int = 20000, with_gap: bool = True) -> EigenPair:
    """Principal eigenpair of -L by inverse power iteration on (shift I - L).

    phi solves L phi = -lam phi, phi_hat the transposed problem; both are
    normalised to integrate to one against the node weights.
    """
    M = gop.size
    A = shift * np.eye(M) - gop.L
    lu = linalg.lu_factor(A)
    start = np.ones(M)
    lam, phi, it_r = _power(lu, start, 0, shift, tol, max_iter)
    lam_l, phi_hat, it_l = _power(lu, start, 1, shift, tol, max_iter)
    # polish until the eigen residuals are at round-off level
    phi = _polish(gop.L, lu, phi, lam, 0, shift)
    phi_hat = _polish(gop.L.T, lu, phi_hat, lam_l, 1, shift)
    lam = _rayleigh(gop.L, phi, phi_hat)
    res = np.max(np.abs(gop.L @ phi + lam * phi)) / np.max(np.abs(phi))
    if np.min(phi) < 0 or np.min(phi_hat) < 0:
        phi, phi_hat = np.abs(phi), np.abs(phi_hat)
    phi = phi / (phi.sum() * gop.weight)
    phi_hat = phi_hat / (phi_hat.sum() * gop.weight)
    gap = None
    if with_gap and M > 2:
        op = LinearOperator((M, M), matvec=lambda v: linalg.lu_solve(lu, v), dtype=float)
        try:
            mu = eigs(op, k=2, which="LM", return_eigenvectors=False, tol=1e-10)
            lams = np.sort((1.0 / mu).real - shift)
            gap = float(lams[1] - lams[0])
        except Exception as exc:  # ARPACK failures only cost the diagnostic
            warnings.warn(f"spectral gap not computed: {exc}")
    return EigenPair(float(lam), phi, phi_hat, gop.nodes.copy(), gop.h, gap, max(it_r, it_l), float(res))


def transition_matrix(gop: GridOperator, t: float, killed: bool = False) -> np.ndarray:
    """exp(t L): P_t f at the nodes is ``transition_matrix @ f``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    E = linalg.expm(t * gop.killed(killed))
    if E.max() < 1e-290:
        raise GridError(f"heat kernel underflows at t = {t}")
    return E


def heat_kernel(gop: GridOperator, t: float) -> np.ndarray:
    """p_D(t, x_i, x_j), the density of P_t with respect to m."""
    if t <= 0:
        raise ValueError("heat kernel requires t > 0")
    return transition_matrix(gop, t) / gop.weight


def iu_ratio(gop: GridOperator, pair: EigenPair, t: float) -> dict:
    """Extreme values of p_D(t, x, y) / (phi(x) phi_hat(y)) over node pairs."""
    p = heat_kernel(gop, t)
    ratio = p / np.outer(pair.phi, pair.phi_hat)
    return {"t": float(t), "c_upper": float(ratio.max()), "c_lower": float(ratio.min())}


def boundary_scaling_fit(pair: EigenPair, domain: Domain, window: float, min_nodes: int = 10) -> dict:
    """Least-squares slope of log phi against log delta_D over delta_D < window."""
    delta = domain.distance(pair.nodes)
    sel = (delta < window) & (delta > 0)
    if sel.sum() < min_nodes:
        raise GridError(f"window {window} holds {int(sel.sum())} nodes, need {min_nodes}")
    X = np.log(delta[sel])
    Y = np.log(pair.phi[sel])
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    r2 = 1.0 - resid.var() / Y.var() if Y.var() > 0 else 1.0
    return {"exponent": float(slope), "intercept": float(intercept), "nodes": int(sel.sum()), "r2": float(r2)}


def yosida_monotone_check(gop: GridOperator, v, ks, killed: bool = True, tol: float = 1e-10) -> dict:
    """Check f_k = k (v - k R_k v) >= 0 and R f_k = k R_k v increasing to v."""
    v = np.asarray(v, dtype=float)
    if np.any(v < -tol):
        raise ValueError("v must be non-negative")
    ks = sorted(float(k) for k in ks)
    approx, gaps, fmins, ident = [], [], [], []
    Lk = gop.killed(killed)
    M = gop.size
    for k in ks:
        kRv = k * linalg.solve(k * np.eye(M) - Lk, v)
        if np.any(kRv > v + tol * (1 + np.abs(v))):
            raise ValueError(f"v is not excessive: k R_k v exceeds v at k = {k}")
        fk = k * (v - kRv)
        Rf = linalg.solve(-Lk, fk)
        approx.append(kRv)
        gaps.append(float(np.max(np.abs(v - kRv))))
        fmins.append(float(fk.min()))
        ident.append(float(np.max(np.abs(Rf - kRv))))
    monotone = all(np.all(b >= a - tol * (1 + np.abs(a))) for a, b in zip(approx, approx[1:]))
    decreasing = all(g2 <= g1 + tol for g1, g2 in zip(gaps, gaps[1:]))
    return {
        "ks": ks,
        "gaps": gaps,
        "f_min": fmins,
        "identity_error": ident,
        "f_nonnegative": all(f >= -tol for f in fmins),
        "monotone": bool(monotone),
        "gap_decreasing": bool(decreasing),
        "passed": bool(monotone and decreasing and all(f >= -tol for f in fmins)),
    }


def interval_nodes(domain: Interval, h: float):
    """Interior nodes a + h, ..., b - h of an interval lattice."""
    m = int(round((domain.b - domain.a) / h))
    return domain.a + h * np.arange(1, m)
