"""Hopf-type lower bounds on sup u - u(x), checked against constructed subsolutions.

Every check returns a :class:`HopfReport`. A probe passes when
``margin = lhs - rhs >= -tolerance``, where the tolerance collects three
standard errors of every Monte Carlo ingredient plus its bias bound. The
bounds are inequalities, so a failure is only declared beyond all
quantified error.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .doob import MinorizationCertificate, minorization_certificate
from .domain import Domain
from .functional import w_complement
from .generator import GeneratorSpec, coefficient_bounds
from .sampler import PathConfig
from .spectral import EigenPair, GridOperator, discretize, principal_eigenpair
from .subsolution import (
    Subsolution,
    make_dirichlet_solution,
    make_resolvent_subsolution,
    verify_weak_subsolution,
)

__all__ = [
    "HopfReport",
    "check_wmp",
    "check_gauge_hopf",
    "check_eigen_hopf",
    "check_minorization_hopf",
    "check_quantitative_hopf_family",
    "phi_normal_derivative",
    "grid_gauge",
    "inputs_hash",
    "hopf_suite",
    "fixture_family",
]

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "to_dict"):
        try:
            return obj.to_dict()
        except TypeError:
            return repr(obj)
    return repr(obj)


def inputs_hash(**parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()


def _u_fingerprint(u: Subsolution):
    h = hashlib.sha256()
    h.update(u.provenance.encode())
    for arr in (u.probe_points, u.probe_values, u.probe_stderr):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    return h.hexdigest()


@dataclass
class HopfReport:
    bound: str
    rows: list
    verdict: str
    inputs_hash: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.verdict == PASS

    @property
    def worst_margin(self):
        return min((r["margin"] + r["tolerance"] for r in self.rows), default=0.0)

    def to_dict(self):
        return {
            "bound": self.bound,
            "verdict": self.verdict,
            "inputs_hash": self.inputs_hash,
            "rows": self.rows,
            "diagnostics": self.diagnostics,
        }

    def csv_rows(self):
        for r in self.rows:
            yield [json.dumps(r["x"]), self.bound, r["lhs"], r["rhs"], r["margin"], r["verdict"]]

    def to_csv(self, path):
        write_report_csv(path, [self])


def write_report_csv(path, reports: Sequence[HopfReport]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["probe", "bound", "lhs", "rhs", "margin", "verdict"])
        for rep in reports:
            for probe, bound, lhs, rhs, margin, verdict in rep.csv_rows():
                w.writerow([probe, bound, f"{lhs:.17g}", f"{rhs:.17g}", f"{margin:.17g}", verdict])


def _row(x, lhs, rhs, tol, inconclusive_scale=None):
    margin = lhs - rhs
    if margin >= -tol:
        verdict = PASS
    else:
        verdict = FAIL
    if inconclusive_scale is not None and verdict == PASS and tol > inconclusive_scale:
        verdict = INCONCLUSIVE
    return {
        "x": np.atleast_1d(x).tolist(),
        "lhs": float(lhs),
        "rhs": float(rhs),
        "margin": float(margin),
        "tolerance": float(tol),
        "verdict": verdict,
    }


def _verdict(rows):
    kinds = {r["verdict"] for r in rows}
    if FAIL in kinds:
        return FAIL
    if INCONCLUSIVE in kinds:
        return INCONCLUSIVE
    return PASS


def _probes(probes, dim):
    return np.atleast_1d(np.asarray(probes, dtype=float)).reshape(-1, dim)


def _u_at(u: Subsolution, x):
    vals, errs = u.value_with_error(x)
    bias = np.zeros(len(vals))
    if u.probe_bias is not None and len(u.probe_points):
        # bias of the nearest probe, a conservative stand-in between probes
        d = np.linalg.norm(u.probe_points[None, :, :] - np.asarray(x)[:, None, :], axis=2)
        bias = u.probe_bias[np.argmin(d, axis=1)]
    return vals, errs, bias


def check_wmp(u: Subsolution, tol: float = 1e-9) -> HopfReport:
    """sup_D u <= max(sup of the exterior data, 0)."""
    slack = tol + 3.0 * float(np.max(u.probe_stderr, initial=0.0))
    if u.probe_bias is not None:
        slack += float(np.max(u.probe_bias, initial=0.0))
    rhs = u.sup_ext_plus
    row = _row([], rhs, u.sup_D, slack)
    row.update(lhs=float(u.sup_D), rhs=float(rhs), margin=float(rhs - u.sup_D))
    rep = HopfReport("wmp", [row], _verdict([row]), inputs_hash(bound="wmp", u=_u_fingerprint(u)))
    rep.diagnostics = {"sup_D": u.sup_D, "sup_ext_plus": rhs}
    return rep


def check_gauge_hopf(u: Subsolution, spec: GeneratorSpec, domain: Domain, probes, n: int,
                     cfg: Optional[PathConfig] = None, workers: int = 1, w_estimates=None) -> HopfReport:
    """sup_{D_S} u - u(x) >= sup_{D_S} u * w_{c,D}(x), w estimated by Monte Carlo."""
    cfg = cfg or PathConfig()
    spec_c = spec.replace(killing=u.killing)
    ubar = u.sup_DS
    pts = _probes(probes, spec.dim)
    uvals, uerrs, ubias = _u_at(u, pts)
    rows = []
    for k, x in enumerate(pts):
        w = w_estimates[k] if w_estimates is not None else w_complement(spec_c, domain, x, n, cfg, workers)
        lhs = ubar - uvals[k]
        rhs = ubar * w.value
        tol = 3.0 * math.hypot(abs(ubar) * w.stderr, uerrs[k]) + abs(ubar) * w.bias_bound + ubias[k]
        row = _row(x, lhs, rhs, tol)
        row["w"] = w.value
        rows.append(row)
    h = inputs_hash(bound="gauge", spec=spec_c, domain=domain, u=_u_fingerprint(u), seed=cfg.seed, n=n,
                    dt=cfg.dt, probes=pts)
    return HopfReport("gauge", rows, _verdict(rows), h, {"ubar": ubar})


def grid_gauge(gop: GridOperator, c_values) -> np.ndarray:
    """v = 1 - w on the nodes, with (c - L) w = c."""
    c_values = np.asarray(c_values, dtype=float)
    if not np.any(c_values):
        return np.ones(gop.size)
    return 1.0 - linalg.solve(np.diag(c_values) - gop.L, c_values)


def eigen_bound_terms(lam, c_inf, c_sup, g_minus_inf, ubar):
    """The two constants of the eigenfunction bound and their sharper forms."""
    term_c = c_inf * ubar / (lam + c_inf) if c_inf > 0 else 0.0
    term_g = g_minus_inf / (lam + c_sup) if g_minus_inf > 0 else 0.0
    if c_inf > 0:
        r = c_inf / lam
        sharp_c = ubar * r / (1.0 + r) ** (1.0 + 1.0 / r)
    else:
        sharp_c = 0.0
    if g_minus_inf > 0:
        if c_sup > 0:
            r = c_sup / lam
            sharp_g = g_minus_inf / c_sup * r / (1.0 + r) ** (1.0 + 1.0 / r)
        else:
            sharp_g = g_minus_inf / (math.e * lam)
    else:
        sharp_g = 0.0
    return {
        "main": (term_c + term_g) / (2.0 * math.e),
        "term_c": term_c / math.e,
        "term_g": term_g / math.e,
        "sharp_c": sharp_c,
        "sharp_g": sharp_g,
    }


def check_eigen_hopf(u: Subsolution, pair: EigenPair, c_bounds, g_bounds, probes, gop: GridOperator) -> HopfReport:
    """sup u - u(x) >= phi(x) / (2e |phi|) * (c_ u / (lam + c_) + g_- / (lam + c^)).

    ``c_bounds`` is (inf c, sup c) and ``g_bounds`` the infimum of g^-.
    The proof's sharper intermediate constants are reported per probe.
    """
    ubar = u.sup_DS
    if ubar < 0:
        raise ValueError("the eigenfunction bound needs sup_{D_S} u >= 0")
    c_inf, c_sup = (float(v) for v in c_bounds)
    g_minus = float(g_bounds)
    terms = eigen_bound_terms(pair.lam, c_inf, c_sup, g_minus, ubar)
    pts = _probes(probes, gop.dim)
    phi_x = gop.interpolate(pair.phi, pts) / pair.phi_sup
    uvals, uerrs, ubias = _u_at(u, pts)
    rows = []
    for k, x in enumerate(pts):
        lhs = ubar - uvals[k]
        rhs = phi_x[k] * terms["main"]
        row = _row(x, lhs, rhs, 3.0 * uerrs[k] + ubias[k] + 1e-12)
        row["rhs_sharp"] = float(phi_x[k] * max(terms["sharp_c"], terms["sharp_g"]))
        rows.append(row)
    h = inputs_hash(bound="eigen", lam=pair.lam, u=_u_fingerprint(u), c=c_bounds, g=g_bounds, probes=pts)
    diag = {"lambda": pair.lam, "phi_sup": pair.phi_sup, **terms}
    return HopfReport("eigen", rows, _verdict(rows), h, diag)


def check_minorization_hopf(u: Subsolution, cert: MinorizationCertificate, spec: GeneratorSpec, domain: Domain,
                            probes, gop: GridOperator) -> HopfReport:
    """sup u - u(x) >= psi(x) {sup u * int c v dnu + int g^- dnu}, certificate at alpha >= sup c."""
    ubar = u.sup_DS
    if ubar < 0:
        raise ValueError("the minorization bound needs sup_{D_S} u >= 0")
    c_nodes = gop.evaluate(u.killing)
    g_nodes = gop.evaluate(u.source)
    c_sup = float(c_nodes.max()) if c_nodes.size else 0.0
    if cert.alpha < c_sup - 1e-12:
        raise ValueError(f"certificate at alpha={cert.alpha} is below sup c = {c_sup}")
    v = grid_gauge(gop, c_nodes)
    int_cv = float(np.sum(c_nodes * v * cert.nu))
    int_g = float(np.sum(np.maximum(-g_nodes, 0.0) * cert.nu))
    const = ubar * int_cv + int_g
    pts = _probes(probes, gop.dim)
    psi_x = gop.interpolate(cert.psi, pts)
    uvals, uerrs, ubias = _u_at(u, pts)
    rows = [_row(x, ubar - uvals[k], psi_x[k] * const, 3.0 * uerrs[k] + ubias[k] + 1e-12) for k, x in enumerate(pts)]
    h = inputs_hash(bound="minorization", spec=spec, domain=domain, u=_u_fingerprint(u), alpha=cert.alpha,
                    probes=pts)
    return HopfReport("minorization", rows, _verdict(rows), h,
                      {"int_cv_dnu": int_cv, "int_gminus_dnu": int_g, "alpha": cert.alpha, "slack": cert.slack})


def check_quantitative_hopf_family(spec: GeneratorSpec, domain: Domain, family: Sequence[Subsolution], probes,
                                   n: int, cfg: Optional[PathConfig] = None, workers: int = 1) -> dict:
    """One psi = w_{c,D} (c from ``spec``) tested against every member of the family."""
    if not family:
        raise ValueError("family is empty")
    cfg = cfg or PathConfig()
    pts = _probes(probes, spec.dim)
    c_mean = float(np.mean(np.asarray(spec.killing(domain.sample_interior(2048, seed=17)))))
    w = [w_complement(spec, domain, x, n, cfg, workers) for x in pts]
    reports = []
    for u in family:
        rep = check_gauge_hopf(u, spec, domain, pts, n, cfg, workers, w_estimates=w)
        rep.bound = f"quantitative[{u.provenance}]"
        reports.append(rep)
    verdict = _verdict([{"verdict": r.verdict} for r in reports])
    return {
        "psi": [e.to_dict() for e in w],
        "a3_prime": c_mean > 0,
        "reports": reports,
        "verdict": verdict,
    }


def phi_normal_derivative(u, domain: Domain, x_hat, exponent_phi: float, hs, resolution: float = 0.0) -> dict:
    """(u(x_hat) - u(x_hat - h n)) / h^exponent along the inward normal.

    The minimum over the smaller half of ``hs`` is the liminf proxy; the
    fitted exponent is the log-log slope of the increments.
    """
    hs = np.sort(np.asarray(hs, dtype=float))[::-1]
    if np.any(hs <= resolution):
        raise ValueError(f"step sizes must exceed the resolution {resolution}")
    x_hat = np.asarray(x_hat, dtype=float).reshape(1, domain.dim)
    n_out = domain.normal(x_hat)[0]
    u_hat = float(np.asarray(u(x_hat)).reshape(-1)[0])
    pts = x_hat - hs[:, None] * n_out[None, :]
    incr = u_hat - np.asarray(u(pts), dtype=float).reshape(-1)
    ratios = incr / hs**exponent_phi
    tail = ratios[len(ratios) // 2:]
    pos = incr > 0
    fitted = float(np.polyfit(np.log(hs[pos]), np.log(incr[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    spread = float(ratios[-1] / ratios[0]) if ratios[0] != 0 else float("inf")
    if spread > 10 or spread < 0.1:
        diagnostic = "diverging" if spread > 10 else "vanishing"
    else:
        diagnostic = "stable"
    return {
        "hs": hs.tolist(),
        "ratios": ratios.tolist(),
        "liminf": float(np.min(tail)),
        "fitted_exponent": fitted,
        "diagnostic": diagnostic,
    }


# ---------------------------------------------------------------------------
# fixture suite


def _ramp(a, b):
    def f(y):
        y = np.asarray(y, dtype=float).reshape(len(y), -1)
        return np.clip((y[:, 0] - a) / (b - a), 0.0, 1.0)
    return f


def _wave(y):
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    return 0.5 * (1.0 + np.sin(3.0 * y[:, 0]))


def _one(y):
    return np.ones(len(y))


def fixture_family(spec, domain, gop, probes, n, cfg, workers=1, alpha=1.0):
    """Gauge, its multiples, Dirichlet solutions with three data and three resolvent potentials."""
    lo, hi = (float(v[0]) for v in domain.bounding_box)
    mid, quarter = 0.5 * (lo + hi), 0.25 * (hi - lo)
    gauge_u = make_dirichlet_solution(spec, domain, _one, probes, n, cfg, exterior_sup=1.0, workers=workers)
    family = [gauge_u, gauge_u.scaled(0.1), gauge_u.scaled(0.5)]
    family.append(make_dirichlet_solution(spec, domain, lambda y: 2.0 * _one(y), probes, n, cfg, exterior_sup=2.0,
                                          workers=workers))
    family.append(make_dirichlet_solution(spec, domain, _ramp(lo, hi), probes, n, cfg, exterior_sup=1.0,
                                          workers=workers))
    family.append(make_dirichlet_solution(spec, domain, _wave, probes, n, cfg, exterior_sup=1.0, workers=workers))
    fs = [
        _one,
        lambda y: (np.abs(np.asarray(y).reshape(len(y), -1)[:, 0] - mid) < 0.5 * quarter).astype(float),
        lambda y: np.cos(np.pi * (np.asarray(y).reshape(len(y), -1)[:, 0] - mid) / (hi - lo)) ** 2,
    ]
    family.extend(make_resolvent_subsolution(gop, f, alpha) for f in fs)
    names = ["gauge", "gauge*0.1", "gauge*0.5", "dirichlet-const2", "dirichlet-ramp", "dirichlet-wave",
             "resolvent-one", "resolvent-window", "resolvent-cos2"]
    return dict(zip(names, family))


def hopf_suite(spec: GeneratorSpec, domain: Domain, probes, n: int, cfg: Optional[PathConfig] = None, h=None,
               workers: int = 1, extra: Optional[dict] = None, weak_times=(0.1,), alpha: float = 1.0) -> dict:
    """Run every bound on the fixture family (plus ``extra`` members).

    Returns the reports and the aggregated verdict: ``fail`` if any probe
    violates a bound beyond tolerance, ``inconclusive`` if some check could
    not decide, ``pass`` otherwise.
    """
    cfg = cfg or PathConfig()
    if spec.dim > 2:
        raise ValueError("the verification suite relies on the grid oracle (d <= 2)")
    pts = _probes(probes, spec.dim)
    if h is None:
        lo, hi = domain.bounding_box
        h = float(np.min(np.asarray(hi) - np.asarray(lo))) / (400 if spec.dim == 1 else 60)
    gop = discretize(spec, domain, h)
    pair = principal_eigenpair(gop)
    bounds = coefficient_bounds(spec, domain)
    family = fixture_family(spec, domain, gop, pts, n, cfg, workers, alpha)
    if extra:
        family.update(extra)
    reports = []
    c_sup = max(bounds["c_sup"], 0.0)
    cert = minorization_certificate(gop, c_sup if c_sup > 0 else 1.0)
    quant = check_quantitative_hopf_family(spec, domain, list(family.values()), pts, n, cfg, workers)
    for name, rep in zip(family, quant["reports"]):
        rep.bound = f"gauge[{name}]"
        reports.append(rep)
    for name, u in family.items():
        rep = check_wmp(u)
        rep.bound = f"wmp[{name}]"
        reports.append(rep)
        if u.sup_DS >= 0:
            cb = coefficient_bounds(spec.replace(killing=u.killing, source=u.source), domain)
            rep = check_eigen_hopf(u, pair, (cb["c_inf"], cb["c_sup"]), cb["g_minus_inf"], pts, gop)
            rep.bound = f"eigen[{name}]"
            reports.append(rep)
            if cb["c_sup"] <= cert.alpha + 1e-12:
                rep = check_minorization_hopf(u, cert, spec, domain, pts, gop)
            else:
                rep = check_minorization_hopf(u, minorization_certificate(gop, cb["c_sup"]), spec, domain, pts, gop)
            rep.bound = f"minorization[{name}]"
            reports.append(rep)
    weak = {}
    for name in (extra or {}):
        weak[name] = verify_weak_subsolution(family[name], spec, domain, pts, weak_times, n, cfg, workers)
    verdicts = [r.verdict for r in reports]
    for wk in weak.values():
        verdicts.append(FAIL if not wk["pass"] else (INCONCLUSIVE if wk["inconclusive"] else PASS))
    if FAIL in verdicts:
        overall = FAIL
    elif INCONCLUSIVE in verdicts:
        overall = INCONCLUSIVE
    else:
        overall = PASS
    return {
        "verdict": overall,
        "reports": reports,
        "weak": weak,
        "lambda": pair.lam,
        "coefficient_bounds": bounds,
        "a3_prime": quant["a3_prime"],
    }
