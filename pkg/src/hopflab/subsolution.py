"""Concrete weak subsolutions of (-A + c) u = g and a Monte Carlo test of the definition.

A :class:`Subsolution` carries interior values (grid or probe interpolant),
explicit exterior data on the extended boundary, and the suprema the Hopf
bounds need: the sup over D, the sup of the exterior data, and the sup over
D together with its extended boundary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

from .domain import Domain, Interval
from .estimate import mean_estimate
from .functional import audit
from .generator import Dilation, Empty, GeneratorSpec, as_field, range_of_nonlocality
from .sampler import Occupation, PathConfig, simulate_batch
from .spectral import GridOperator

__all__ = [
    "Subsolution",
    "make_resolvent_subsolution",
    "make_dirichlet_solution",
    "make_user_subsolution",
    "verify_weak_subsolution",
    "exterior_probe_points",
    "load_subsolution_csv",
]


def _values(f, x):
    x = np.asarray(x, dtype=float)
    return np.asarray(f(x), dtype=float).reshape(len(x))


class _ProbeInterpolant:
    """Piecewise-linear interpolation of probe values, closed off with boundary data."""

    def __init__(self, domain: Domain, points, values, boundary_points, boundary_values):
        pts = np.asarray(points, dtype=float).reshape(len(values), -1)
        self.dim = pts.shape[1]
        allp = np.concatenate([pts, np.asarray(boundary_points, float).reshape(-1, self.dim)])
        allv = np.concatenate([np.asarray(values, float), np.asarray(boundary_values, float)])
        if self.dim == 1:
            order = np.argsort(allp[:, 0])
            self.xs, self.vs = allp[order, 0], allv[order]
        else:
            self.lin = LinearNDInterpolator(allp, allv)
            self.near = NearestNDInterpolator(allp, allv)

    def __call__(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        if self.dim == 1:
            return np.interp(x[:, 0], self.xs, self.vs)
        out = self.lin(x)
        bad = np.isnan(out)
        if bad.any():
            out[bad] = self.near(x[bad])
        return out


@dataclass
class Subsolution:
    """A bounded function on R^d claimed to be a weak subsolution for (c, g).

    ``probe_points``/``probe_values``/``probe_stderr`` are the points where
    the interior values are known directly (grid nodes or Monte Carlo probes).
    """

    domain: Domain
    inside: Callable
    exterior: Callable
    sup_D: float
    sup_ext: float
    sup_DS: float
    provenance: str
    killing: Callable
    source: Callable
    probe_points: np.ndarray
    probe_values: np.ndarray
    probe_stderr: np.ndarray
    stderr_interp: Optional[Callable] = field(default=None, repr=False)
    probe_bias: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    def __call__(self, x):
        x = self.domain._pts(x)
        inside = self.domain.contains(x)
        out = np.empty(len(x))
        if inside.any():
            out[inside] = _values(self.inside, x[inside])
        if (~inside).any():
            out[~inside] = _values(self.exterior, x[~inside])
        return out

    @property
    def sup_ext_plus(self):
        return max(self.sup_ext, 0.0)

    def value_with_error(self, x):
        """Values and standard errors at ``x`` (errors interpolated between probes)."""
        x = self.domain._pts(x)
        vals = self(x)
        if self.stderr_interp is None:
            return vals, np.zeros(len(x))
        err = np.where(self.domain.contains(x), _values(self.stderr_interp, x), 0.0)
        return vals, err

    def scaled(self, a: float) -> "Subsolution":
        """a * u for a >= 0; a subsolution for (c, a g)."""
        if a < 0:
            raise ValueError("only non-negative multiples preserve subsolutions")
        inside, exterior, src = self.inside, self.exterior, self.source
        sint = self.stderr_interp
        return replace(
            self,
            inside=lambda x: a * _values(inside, x),
            exterior=lambda x: a * _values(exterior, x),
            sup_D=a * self.sup_D,
            sup_ext=a * self.sup_ext,
            sup_DS=a * self.sup_DS,
            provenance=f"{self.provenance}*{a:g}",
            source=lambda x: a * _values(src, x),
            probe_values=a * self.probe_values,
            probe_stderr=a * self.probe_stderr,
            stderr_interp=None if sint is None else (lambda x: a * _values(sint, x)),
            probe_bias=None if self.probe_bias is None else a * self.probe_bias,
            notes=list(self.notes),
        )

    def to_csv(self, path):
        """Interior table: coordinates, u, stderr (17 significant digits)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            d = self.probe_points.shape[1]
            w.writerow([f"x{k}" for k in range(d)] + ["u", "stderr"])
            for p, v, e in zip(self.probe_points, self.probe_values, self.probe_stderr):
                w.writerow([f"{c:.17g}" for c in p] + [f"{v:.17g}", f"{e:.17g}"])

    def exterior_to_csv(self, path, points):
        points = np.asarray(points, dtype=float).reshape(len(points), -1)
        vals = _values(self.exterior, points)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{k}" for k in range(points.shape[1])] + ["u"])
            for p, v in zip(points, vals):
                w.writerow([f"{c:.17g}" for c in p] + [f"{v:.17g}"])


def exterior_probe_points(domain: Domain, support, n: int = 2048, far: Optional[float] = None, seed: int = 11):
    """Finite probe set for the extended boundary: dD plus exterior points in reach.

    For unbounded reach the exterior is probed up to ``far`` (default one
    diameter) from D; beyond that the data must be declared by the caller.
    """
    d = domain.dim
    if isinstance(domain, Interval):  # the boundary is two points
        bnd = np.array([[domain.a], [domain.b]])
    else:
        bnd = domain.project(domain.sample_interior(n, seed=seed))
    if isinstance(support, Empty):
        return bnd
    reach = support.radius if isinstance(support, Dilation) else (far if far is not None else domain.diameter)
    lo, hi = domain.bounding_box
    box = domain.sample_box(np.asarray(lo) - reach, np.asarray(hi) + reach, 4 * n, seed=seed + 1)
    sd = domain.signed_distance(box)
    ext = box[(sd < 0) & (-sd <= reach)]
    if d == 1:
        ext = np.concatenate([ext, [np.asarray(lo) - reach, np.asarray(hi) + reach]])
    return np.concatenate([bnd, ext])


def _sup_ext(exterior, domain, support, exterior_sup=None):
    if exterior_sup is not None:
        return float(exterior_sup)
    return float(np.max(_values(exterior, exterior_probe_points(domain, support))))


# ---------------------------------------------------------------------------
# constructors


def make_resolvent_subsolution(gop: GridOperator, f: Callable, alpha: float) -> Subsolution:
    """u = -R_alpha f inside D and 0 outside: a subsolution for c = alpha, g = 0."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    fv = gop.evaluate(lambda y: _values(f, y))
    if np.any(fv < 0):
        raise ValueError("f must be non-negative")
    u_nodes = -gop.resolvent(alpha, fv)
    nodes = gop.nodes.copy()
    zero = lambda x: np.zeros(len(np.asarray(x).reshape(len(x), -1)))  # noqa: E731
    return Subsolution(
        domain=gop.domain,
        inside=lambda x: gop.interpolate(u_nodes, x),
        exterior=zero,
        sup_D=float(u_nodes.max()),
        sup_ext=0.0,
        sup_DS=0.0,
        provenance="resolvent-built",
        killing=as_field(float(alpha)),
        source=as_field(0.0),
        probe_points=nodes,
        probe_values=u_nodes,
        probe_stderr=np.zeros(len(u_nodes)),
        notes=["interior values are the piecewise-linear grid interpolant"],
    )


def _boundary_closure(domain, exterior):
    if isinstance(domain, Interval):
        pts = np.array([[domain.a], [domain.b]])
    else:
        pts = domain.project(domain.sample_interior(256, seed=5))
    return pts, _values(exterior, pts)


def make_dirichlet_solution(spec: GeneratorSpec, domain: Domain, exterior_data: Callable, probes, n: int,
                            cfg: Optional[PathConfig] = None, c=None, g=None, exterior_sup=None,
                            workers: int = 1) -> Subsolution:
    """u(x) = E_x[e_c(tau) h(X_tau)] + E_x int_0^tau e_c g(X_r) dr at each probe."""
    cfg = cfg or PathConfig()
    c_field = spec.killing if c is None else as_field(c)
    g_field = spec.source if g is None else as_field(g)
    spec_cg = spec.replace(killing=c_field, source=g_field)
    probes = np.atleast_1d(np.asarray(probes, dtype=float)).reshape(-1, spec.dim)
    support = range_of_nonlocality(spec, domain)
    g_norm = float(np.max(np.abs(_values(g_field, domain.sample_interior(2048, seed=3))))) if spec_cg.has_source else 0.0
    ests = []
    for x in probes:
        occ = [Occupation(lambda y: _values(g_field, y), 0.0, True)] if spec_cg.has_source else []
        batch = audit(simulate_batch(spec_cg, domain, x, cfg, n, workers=workers, occupations=occ))
        cens = batch.censored
        vals = np.zeros(batch.n)
        done = ~cens
        if done.any():
            vals[done] = batch.e_c[done] * _values(exterior_data, batch.x_exit[done])
        if occ:
            vals += batch.occ[:, 0]
        h_norm = float(np.max(np.abs(_values(exterior_data, exterior_probe_points(domain, support, 256)))))
        bias = float(np.sum(batch.e_c[cens]) / batch.n) * h_norm
        if cens.any() and g_norm:
            bias += g_norm * cfg.t_max * cens.mean()
        ests.append(mean_estimate(vals, cfg.seed, bias))
    values = np.array([e.value for e in ests])
    errs = np.array([e.stderr for e in ests])
    biases = np.array([e.bias_bound for e in ests])
    bpts, bvals = _boundary_closure(domain, exterior_data)
    interp = _ProbeInterpolant(domain, probes, values, bpts, bvals)
    err_interp = _ProbeInterpolant(domain, probes, errs, bpts, np.zeros(len(bvals)))
    sup_ext = _sup_ext(exterior_data, domain, support, exterior_sup)
    sup_D = float(values.max())
    # with sup of the exterior data >= 0 the weak maximum principle pins the sup
    sup_DS = sup_ext if sup_ext >= 0 else max(sup_ext, sup_D)
    sol = Subsolution(
        domain=domain,
        inside=interp,
        exterior=exterior_data,
        sup_D=sup_D,
        sup_ext=sup_ext,
        sup_DS=sup_DS,
        provenance="dirichlet-built",
        killing=c_field,
        source=g_field,
        probe_points=probes,
        probe_values=values,
        probe_stderr=errs,
        stderr_interp=err_interp,
        probe_bias=biases,
        notes=["interior values interpolated between Monte Carlo probes"],
    )
    return sol


def make_user_subsolution(domain: Domain, inside: Callable, exterior: Callable, killing=0.0, source=0.0,
                          support=None, sup_probe_points=None, exterior_sup=None) -> Subsolution:
    """Wrap user-supplied interior values and explicit exterior data."""
    support = Empty() if support is None else support
    pts = domain.sample_interior(4096, seed=13) if sup_probe_points is None else np.asarray(sup_probe_points, float)
    vals = _values(inside, pts)
    sup_D = float(vals.max())
    sup_ext = _sup_ext(exterior, domain, support, exterior_sup)
    return Subsolution(
        domain=domain,
        inside=inside,
        exterior=exterior,
        sup_D=sup_D,
        sup_ext=sup_ext,
        sup_DS=max(sup_D, sup_ext),
        provenance="user",
        killing=as_field(killing),
        source=as_field(source),
        probe_points=pts.reshape(len(vals), -1),
        probe_values=vals,
        probe_stderr=np.zeros(len(vals)),
        notes=["sup over D taken over a finite probe set"],
    )


def load_subsolution_csv(path, domain: Domain, exterior_path, killing=0.0, source=0.0, support=None):
    """Import interior values and an exterior-data table written by ``to_csv``.

    Both tables are interpolated piecewise-linearly; exterior values beyond
    the table are held at the nearest tabulated value.
    """
    def read(p):
        with open(p) as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], np.array(rows[1:], dtype=float)
        d = sum(h.startswith("x") for h in head)
        return body[:, :d], body[:, d]

    pts, vals = read(path)
    epts, evals = read(exterior_path)
    if pts.shape[1] == 1:
        order = np.argsort(epts[:, 0])
        ex, ev = epts[order, 0], evals[order]

        def exterior(x):
            return np.interp(np.asarray(x, float).reshape(-1), ex, ev)
    else:
        near = NearestNDInterpolator(epts, evals)

        def exterior(x):
            return near(np.asarray(x, float).reshape(-1, pts.shape[1]))
    bpts, bvals = _boundary_closure(domain, exterior)
    inside = _ProbeInterpolant(domain, pts, vals, bpts, bvals)
    sub = make_user_subsolution(domain, inside, exterior, killing, source, support, sup_probe_points=pts,
                                exterior_sup=float(evals.max()))
    sub.notes.append("imported values are interpolated piecewise-linearly")
    return sub


# ---------------------------------------------------------------------------
# the defining inequality


def verify_weak_subsolution(u: Subsolution, spec: GeneratorSpec, domain: Domain, probes, times, n: int,
                            cfg: Optional[PathConfig] = None, workers: int = 1,
                            max_tolerance: Optional[float] = None) -> dict:
    """One-sided test u(x) <= E[e_c(tau^t) u(X_{tau^t})] + E int_0^{tau^t} e_c g.

    Here tau^t = min(tau_D, t). A probe fails when u(x) exceeds the
    estimate by more than 3 combined standard errors plus bias bounds. A probe
    whose tolerance exceeds ``max_tolerance`` cannot decide and is marked
    inconclusive.
    """
    cfg = cfg or PathConfig()
    spec_cg = spec.replace(killing=u.killing, source=u.source)
    probes = np.atleast_1d(np.asarray(probes, dtype=float)).reshape(-1, spec.dim)
    scale = max(1.0, abs(u.sup_DS), float(np.max(np.abs(u.probe_values))) if u.probe_values.size else 1.0)
    max_tol = 0.05 * scale if max_tolerance is None else float(max_tolerance)
    rows = []
    for t in np.atleast_1d(times):
        run_cfg = cfg.replace(t_max=float(t))
        for x in probes:
            occ = [Occupation(lambda y: _values(u.source, y), 0.0, True)] if spec_cg.has_source else []
            batch = audit(simulate_batch(spec_cg, domain, x, run_cfg, n, workers=workers, occupations=occ))
            vals = batch.e_c * u(batch.x_exit)
            if occ:
                vals = vals + batch.occ[:, 0]
            est = mean_estimate(vals, cfg.seed)
            ux, ux_err = u.value_with_error(x[None])
            tol = 3.0 * math.hypot(est.stderr, float(ux_err[0]))
            margin = est.value - float(ux[0])
            rows.append({
                "x": x.tolist(),
                "t": float(t),
                "u": float(ux[0]),
                "rhs": est.value,
                "stderr": est.stderr,
                "margin": margin,
                "tolerance": tol,
                "pass": bool(margin >= -tol),
                "inconclusive": bool(tol > max_tol),
            })
    worst = min(rows, key=lambda r: r["margin"] + r["tolerance"])
    passed = all(r["pass"] for r in rows)
    inconclusive = any(r["inconclusive"] for r in rows)
    return {
        "provenance": u.provenance,
        "rows": rows,
        "worst": worst,
        "pass": passed,
        "inconclusive": inconclusive,
        "notes": list(u.notes),
    }
