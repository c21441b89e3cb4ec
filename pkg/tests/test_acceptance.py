"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import json

import numpy as np
import pytest

import oracles as O
from hopflab.cli import main
from hopflab.doob import minorization_certificate, minorization_phi_check, qsd, resolvent_chain, tv_ergodicity
from hopflab.domain import Interval
from hopflab.functional import gauge, gauge_identity_check, resolvent_identity_check
from hopflab.generator import GeneratorSpec, uniform_ball_jumps
from hopflab.sampler import PathConfig, simulate_batch
from hopflab.spectral import boundary_scaling_fit, discretize, iu_ratio, principal_eigenpair
from hopflab.subsolution import make_dirichlet_solution
from hopflab.verify import PASS, check_gauge_hopf, hopf_suite

UNIT = Interval(0.0, 1.0)
SYM = Interval(-1.0, 1.0)
ONE = lambda y: np.ones(len(y))  # noqa: E731
PROBES_UNIT = [[0.1], [0.3], [0.5], [0.7], [0.9]]
PROBES_SYM = [[-0.8], [-0.4], [0.0], [0.4], [0.8]]

FIXTURES = {
    "brownian": (GeneratorSpec.brownian(1), UNIT, 2.5e-3),
    "stable": (GeneratorSpec.stable(1.0), SYM, 5e-3),
}


@pytest.fixture(scope="module")
def eigen_fixtures():
    out = {}
    for name, (spec, dom, h) in FIXTURES.items():
        gop = discretize(spec, dom, h)
        out[name] = (gop, principal_eigenpair(gop))
    return out


def test_01_brownian_exit_time(verdict):
    s = simulate_batch(GeneratorSpec.brownian(1), UNIT, [0.5], PathConfig(dt=1e-4, seed=101), 100_000).summary()
    rel = abs(s["mean_tau"] / O.FROZEN["exit_time_brownian_half"] - 1)
    verdict(1, rel <= 0.01, f"mean tau {s['mean_tau']:.5f} vs 0.25, rel err {rel:.2e} (tol 1e-2)")


@pytest.fixture(scope="module")
def stable_batch():
    return simulate_batch(GeneratorSpec.stable(1.0), SYM, [0.0], PathConfig(dt=1e-3, seed=102), 100_000)


def test_02_getoor_mean_exit(verdict, stable_batch):
    s = stable_batch.summary()
    rel = abs(s["mean_tau"] / O.FROZEN["getoor_s1_origin"] - 1)
    verdict(2, rel <= 0.02, f"mean tau {s['mean_tau']:.5f} vs 1.0, rel err {rel:.2e} (tol 2e-2)")


def test_03_gauge_oracle(verdict):
    v = gauge(GeneratorSpec.brownian(1, killing=1.0), UNIT, [0.5], 50_000, PathConfig(dt=1e-3, seed=103))
    err = abs(v.value - O.FROZEN["gauge_brownian_half"])
    tol = max(3 * v.stderr, 1e-2)
    verdict(3, err <= tol, f"v(0.5) {v.value:.5f} vs 0.79328, err {err:.2e} (tol {tol:.2e})")


def test_04_gauge_identity(verdict):
    cfg = PathConfig(dt=1e-3, seed=104)
    reps = {
        "brownian": gauge_identity_check(GeneratorSpec.brownian(1, killing=1.0), UNIT, PROBES_UNIT, 20_000, cfg,
                                         h=2.5e-3),
        "stable": gauge_identity_check(GeneratorSpec.stable(1.0, killing=1.0), SYM, PROBES_SYM, 10_000, cfg, h=5e-3),
    }
    worst = {k: max(abs(r["w"] - r["r_cv"]) / r["tolerance"] for r in rep["probes"]) for k, rep in reps.items()}
    ok = all(rep["pass"] for rep in reps.values())
    verdict(4, ok, "max |w - R(cv)| / tolerance: " + ", ".join(f"{k} {v:.2f}" for k, v in worst.items()))


def test_05_brownian_eigenpair(verdict):
    gop = discretize(GeneratorSpec.brownian(1), UNIT, 1e-3)
    pair = principal_eigenpair(gop)
    lam, phi = O.brownian_eigen()
    rel = abs(pair.lam / lam - 1)
    sup = float(np.max(np.abs(pair.phi - phi(gop.nodes[:, 0]))))
    verdict(5, rel <= 5e-3 and sup <= 1e-2, f"lambda {pair.lam:.6f} rel err {rel:.1e}; phi sup err {sup:.1e}")


def test_06_resolvent_identity(verdict):
    cfg = PathConfig(dt=1e-3, seed=106)
    lines, ok = [], True
    for name, spec, dom, probes, h in (("brownian", GeneratorSpec.brownian(1), UNIT, [[0.25], [0.5], [0.75]], 2.5e-3),
                                       ("stable", GeneratorSpec.stable(1.0), SYM, [[-0.5], [0.0], [0.5]], 5e-3)):
        for a in (1.0, 2.0):
            for b in (2.0, 3.0):
                rep = resolvent_identity_check(spec, dom, ONE, a, b, probes, 5000, cfg, h=h)
                ok &= rep["grid_residual"] <= 1e-8 and rep["pass"]
                lines.append(f"{name}({a:g},{b:g}) res {rep['grid_residual']:.0e}")
    verdict(6, ok, "; ".join(lines))


def test_07_exit_location(verdict, stable_batch):
    cp_spec = GeneratorSpec(dim=1, diffusion=0.1, levy=uniform_ball_jumps(0.5, 1, rate=5.0))
    cp = simulate_batch(cp_spec, UNIT, [0.5], PathConfig(dt=1e-2, seed=107), 100_000)
    counts = (stable_batch.summary()["outside_range"], cp.summary()["outside_range"])
    verdict(7, counts == (0, 0), f"OutsideRange stable {counts[0]} / 1e5, compound Poisson {counts[1]} / 1e5")


def test_08_boundary_scaling(verdict):
    fits = {}
    for s in (0.5, 1.0, 1.5):
        pair = principal_eigenpair(discretize(GeneratorSpec.stable(s), SYM, 2e-3), with_gap=False)
        fits[s] = boundary_scaling_fit(pair, SYM, 0.05)["exponent"]
    ok = all(abs(g - s / 2) <= 0.1 for s, g in fits.items())
    verdict(8, ok, ", ".join(f"s={s:g}: gamma {g:.3f} (target {s / 2:g})" for s, g in fits.items()))


def test_09_quantitative_hopf(verdict):
    cfg = PathConfig(dt=1e-3, seed=109)
    parts, ok = [], True
    for name, spec, dom, probes, h in (("brownian", GeneratorSpec.brownian(1, killing=1.0), UNIT, PROBES_UNIT, 5e-3),
                                       ("stable", GeneratorSpec.stable(1.0, killing=1.0), SYM, PROBES_SYM, 1e-2)):
        res = hopf_suite(spec, dom, probes, 5000, cfg, h=h)
        # equality case on paths independent of the ones that built u = v
        v = make_dirichlet_solution(spec, dom, ONE, probes, 20_000, cfg.replace(seed=1109), exterior_sup=1.0)
        eq = check_gauge_hopf(v, spec, dom, probes, 20_000, cfg)
        tight = max(abs(r["margin"]) / r["tolerance"] for r in eq.rows)
        ok &= res["verdict"] == PASS and tight <= 1.0
        parts.append(f"{name} {res['verdict']} ({len(res['reports'])} reports), equality |margin|/3sigma {tight:.2f}")
    verdict(9, ok, "; ".join(parts))


def test_10_minorization_ergodicity(verdict, eigen_fixtures):
    parts, ok = [], True
    for name, (gop, pair) in eigen_fixtures.items():
        cert = minorization_certificate(gop, 1.0)
        tv = tv_ergodicity(resolvent_chain(gop, pair, 1.0))
        c_min = minorization_phi_check(cert, pair)["c_min"]
        good = cert.valid and cert.nu_mass > 0 and tv["rho"] < 1 and tv["r2"] >= 0.99 and c_min > 0
        ok &= good
        parts.append(f"{name} rho {tv['rho']:.4f} R2 {tv['r2']:.4f} c_min {c_min:.3g}")
    verdict(10, ok, "; ".join(parts))


def test_11_qsd(verdict, eigen_fixtures):
    parts, ok = [], True
    for name, (gop, pair) in eigen_fixtures.items():
        res = qsd(gop, pair)
        good = res["monotone"] and res["final"] < 1e-6
        if name == "brownian":
            _, phi = O.brownian_eigen()
            sup = float(np.max(np.abs(res["pi_density"] - phi(gop.nodes[:, 0]))))
            good &= sup <= 1e-3
            parts.append(f"{name} final {res['final']:.1e}, Pi sup err {sup:.1e}")
        else:
            parts.append(f"{name} final {res['final']:.1e}")
        ok &= good
    verdict(11, ok, "; ".join(parts))


def test_12_intrinsic_ultracontractivity(verdict, eigen_fixtures):
    parts, ok = [], True
    for name, (gop, pair) in eigen_fixtures.items():
        rows = [iu_ratio(gop, pair, t) for t in (0.1, 0.5, 1.0)]
        ratios = np.array([r["c_upper"] / r["c_lower"] for r in rows])
        good = all(r["c_lower"] > 0 and np.isfinite(r["c_upper"]) for r in rows) and np.all(np.diff(ratios) <= 0)
        ok &= good
        parts.append(f"{name} ratios " + " ".join(f"{v:.4g}" for v in ratios))
    verdict(12, ok, "; ".join(parts))


VERIFY_CFG = {
    "operator": {"dim": 1, "diffusion": [[1.0]], "killing": 1.0},
    "domain": {"type": "interval", "a": 0.0, "b": 1.0},
    "task": {"type": "verify", "inject_supersolution": True, "weak_times": [0.1]},
    "numeric": {"dt": 0.001, "n": 4000, "h": 0.0025, "seed": 1, "probes": [[0.2], [0.5], [0.8]]},
}


def test_13_planted_supersolution(verdict, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(VERIFY_CFG))
    code = main(["--config", str(cfg), "--out", str(tmp_path / "out")])
    verdict(13, code == 2, f"exit code {code} (expected 2)")


def test_14_determinism_across_workers(verdict, tmp_path):
    cfgs = {
        "simulate": {
            "operator": {"dim": 1, "levy": {"type": "isotropic_stable", "order": 1.0}, "killing": 1.0},
            "domain": {"type": "interval", "a": -1.0, "b": 1.0},
            "task": {"type": "simulate", "x0": [0.3]},
            "numeric": {"dt": 0.001, "n": 20000, "seed": 14},
        },
        "verify": {**VERIFY_CFG, "task": {"type": "verify", "weak_times": [0.1]}},
    }
    same = {}
    for name, cfg in cfgs.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for w in (1, 8):
            out = tmp_path / f"{name}_w{w}"
            main(["--config", str(path), "--out", str(out), "--workers", str(w)])
            outs.append((out / "summary.json").read_bytes())
        same[name] = outs[0] == outs[1]
    verdict(14, all(same.values()), ", ".join(f"{k} summary identical: {v}" for k, v in same.items()))
