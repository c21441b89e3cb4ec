import numpy as np
import pytest

import oracles as O
from hopflab.domain import Interval
from hopflab.doob import minorization_certificate
from hopflab.generator import GeneratorSpec
from hopflab.sampler import PathConfig
from hopflab.spectral import discretize, principal_eigenpair
from hopflab.subsolution import make_dirichlet_solution, make_resolvent_subsolution, make_user_subsolution
from hopflab.verify import (
    FAIL,
    PASS,
    check_eigen_hopf,
    check_gauge_hopf,
    check_minorization_hopf,
    check_quantitative_hopf_family,
    check_wmp,
    eigen_bound_terms,
    hopf_suite,
    phi_normal_derivative,
    write_report_csv,
)

UNIT = Interval(0.0, 1.0)
SYM = Interval(-1.0, 1.0)
CFG = PathConfig(dt=1e-3, seed=41)
PROBES = np.array([[0.1], [0.3], [0.5], [0.7], [0.9]])
ONE = lambda y: np.ones(len(y))  # noqa: E731
KILLED = GeneratorSpec.brownian(1, killing=1.0)


@pytest.fixture(scope="module")
def grid():
    gop = discretize(GeneratorSpec.brownian(1), UNIT, 2.5e-3)
    return gop, principal_eigenpair(gop)


@pytest.fixture(scope="module")
def gauge_u():
    return make_dirichlet_solution(KILLED, UNIT, ONE, PROBES, 8000, CFG, exterior_sup=1.0)


def test_wmp_examples(grid, gauge_u):
    gop, _ = grid
    assert check_wmp(make_resolvent_subsolution(gop, ONE, 1.0)).passed
    assert check_wmp(gauge_u).passed
    harmonic = make_dirichlet_solution(GeneratorSpec.brownian(1), UNIT, lambda y: y[:, 0], PROBES, 2000, CFG,
                                       exterior_sup=1.0)
    rep = check_wmp(harmonic)
    assert rep.passed and rep.rows[0]["rhs"] == 1.0


def test_wmp_flags_interior_bump():
    bump = make_user_subsolution(UNIT, lambda y: 1.0 - (2 * y[:, 0] - 1) ** 2, lambda y: np.zeros(len(y)))
    assert check_wmp(bump).verdict == FAIL


def test_gauge_bound_is_tight_on_gauge(gauge_u):
    # same seed: 1 - v and w come from the same paths, so the margin is exactly 0
    same = check_gauge_hopf(gauge_u, KILLED, UNIT, PROBES, 8000, CFG)
    assert all(r["margin"] == 0.0 for r in same.rows)
    rep = check_gauge_hopf(gauge_u, KILLED, UNIT, PROBES, 8000, CFG.replace(seed=42))
    assert rep.passed
    for r in rep.rows:
        assert abs(r["margin"]) <= r["tolerance"]
        assert r["lhs"] == pytest.approx(1.0 - O.brownian_gauge(r["x"][0]), abs=1e-2)


def test_gauge_bound_trivial_for_potential(grid):
    gop, _ = grid
    u = make_resolvent_subsolution(gop, ONE, 1.0)
    rep = check_gauge_hopf(u, KILLED, UNIT, PROBES, 500, CFG)
    assert rep.passed and all(r["rhs"] == 0.0 for r in rep.rows)


def test_gauge_bound_linear_in_scaling(gauge_u):
    rep = check_gauge_hopf(gauge_u.scaled(0.5), KILLED, UNIT, PROBES, 8000, CFG)
    assert rep.passed
    assert all(abs(r["margin"]) <= r["tolerance"] for r in rep.rows)


def test_eigen_bound_constant_matches_oracle(grid):
    _, pair = grid
    terms = eigen_bound_terms(pair.lam, 1.0, 1.0, 0.0, 1.0)
    assert terms["main"] == pytest.approx(O.FROZEN["eigen_bound_constant_brownian_c1"], rel=1e-5)
    assert terms["sharp_c"] >= terms["term_c"] / 2


def test_eigen_bound_on_gauge(grid, gauge_u):
    gop, pair = grid
    rep = check_eigen_hopf(gauge_u, pair, (1.0, 1.0), 0.0, PROBES, gop)
    assert rep.passed
    mid = rep.rows[2]
    assert mid["rhs"] == pytest.approx(O.FROZEN["eigen_bound_constant_brownian_c1"], rel=1e-3)
    assert mid["lhs"] == pytest.approx(O.FROZEN["w_brownian_half"], abs=1e-2)
    # the eigen bound is weaker than the gauge bound
    gauge = check_gauge_hopf(gauge_u, KILLED, UNIT, PROBES, 8000, CFG)
    assert all(e["rhs"] <= g["rhs"] for e, g in zip(rep.rows, gauge.rows))


def test_eigen_bound_degenerate_coefficients(grid):
    gop, pair = grid
    u = make_resolvent_subsolution(gop, ONE, 1.0)
    rep = check_eigen_hopf(u, pair, (0.0, 0.0), 0.0, PROBES, gop)
    assert rep.passed and all(r["rhs"] == 0.0 for r in rep.rows)


def test_eigen_bound_with_source(grid):
    gop, pair = grid
    u = make_resolvent_subsolution(gop, ONE, 0.0)
    rep = check_eigen_hopf(u, pair, (0.0, 0.0), 1.0, PROBES, gop)
    assert rep.passed
    x = PROBES[:, 0]
    expected = np.sin(np.pi * x) / (2 * np.e * pair.lam)
    np.testing.assert_allclose([r["rhs"] for r in rep.rows], expected, rtol=1e-3)
    assert all(r["margin"] > 0 for r in rep.rows)


def test_eigen_bound_rejects_negative_sup(grid):
    gop, pair = grid
    neg = make_user_subsolution(UNIT, lambda y: -np.ones(len(y)), lambda y: -np.ones(len(y)))
    with pytest.raises(ValueError):
        check_eigen_hopf(neg, pair, (0.0, 0.0), 0.0, PROBES, gop)


def test_minorization_bound_examples(grid, gauge_u):
    gop, _ = grid
    cert0 = minorization_certificate(gop, 1.0)
    pot = make_resolvent_subsolution(gop, ONE, 1.0)
    free = make_user_subsolution(UNIT, pot.inside, pot.exterior, sup_probe_points=gop.nodes, exterior_sup=0.0)
    rep0 = check_minorization_hopf(free, cert0, GeneratorSpec.brownian(1), UNIT, PROBES, gop)
    assert rep0.passed and all(r["rhs"] == 0.0 for r in rep0.rows)
    rep = check_minorization_hopf(gauge_u, cert0, KILLED, UNIT, PROBES, gop)
    assert rep.passed and all(r["rhs"] > 0 for r in rep.rows)
    with_source = make_dirichlet_solution(KILLED, UNIT, ONE, PROBES, 8000, CFG, g=-1.0, exterior_sup=1.0)
    rep_g = check_minorization_hopf(with_source, cert0, KILLED, UNIT, PROBES, gop)
    assert rep_g.passed
    assert rep_g.diagnostics["int_cv_dnu"] > 0 and rep_g.diagnostics["int_gminus_dnu"] > 0


def test_minorization_needs_certificate_above_sup_c(grid, gauge_u):
    gop, _ = grid
    cert = minorization_certificate(gop, 0.5)
    with pytest.raises(ValueError):
        check_minorization_hopf(gauge_u, cert, KILLED, UNIT, PROBES, gop)


def test_quantitative_family(grid, gauge_u):
    gop, _ = grid
    fam = [gauge_u, gauge_u.scaled(0.1), gauge_u.scaled(0.5), make_resolvent_subsolution(gop, ONE, 1.0)]
    res = check_quantitative_hopf_family(KILLED, UNIT, fam, PROBES, 8000, CFG)
    assert res["verdict"] == PASS and res["a3_prime"]
    with pytest.raises(ValueError):
        check_quantitative_hopf_family(KILLED, UNIT, [], PROBES, 10, CFG)


def test_reports_are_reproducible(gauge_u, tmp_path):
    a = check_gauge_hopf(gauge_u, KILLED, UNIT, PROBES, 2000, CFG)
    b = check_gauge_hopf(gauge_u, KILLED, UNIT, PROBES, 2000, CFG)
    assert a.inputs_hash == b.inputs_hash and a.rows == b.rows
    c = check_gauge_hopf(gauge_u, KILLED, UNIT, PROBES, 2000, CFG.replace(seed=42))
    assert c.inputs_hash != a.inputs_hash
    write_report_csv(tmp_path / "r.csv", [a])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "probe,bound,lhs,rhs,margin,verdict" and len(lines) == 1 + len(PROBES)


def test_phi_normal_derivative_linear():
    res = phi_normal_derivative(lambda x: np.asarray(x)[:, 0], UNIT, [1.0], 1.0, [0.1, 0.05, 0.02, 0.01])
    np.testing.assert_allclose(res["ratios"], 1.0)
    assert res["diagnostic"] == "stable" and res["fitted_exponent"] == pytest.approx(1.0)


def test_phi_normal_derivative_stable_exponent():
    gop = discretize(GeneratorSpec.stable(1.0), SYM, 2e-3)
    pair = principal_eigenpair(gop, with_gap=False)

    def u(x):
        return 1.0 - gop.interpolate(pair.phi, x) / pair.phi_sup

    hs = [0.2, 0.1, 0.05, 0.025, 0.0125]
    good = phi_normal_derivative(u, SYM, [1.0], 0.5, hs, resolution=2e-3)
    assert good["liminf"] > 0 and good["diagnostic"] == "stable"
    assert good["fitted_exponent"] == pytest.approx(0.5, abs=0.1)
    wrong = phi_normal_derivative(u, SYM, [1.0], 1.0, [0.9, 0.3, 0.1, 0.03, 0.01, 0.005], resolution=2e-3)
    assert wrong["diagnostic"] == "diverging"
    with pytest.raises(ValueError):
        phi_normal_derivative(u, SYM, [1.0], 0.5, [0.1, 1e-3], resolution=2e-3)


def test_hopf_suite_brownian_passes():
    res = hopf_suite(KILLED, UNIT, [[0.1], [0.5], [0.9]], 2000, CFG, h=5e-3)
    assert res["verdict"] == PASS
    names = {r.bound.split("[")[0] for r in res["reports"]}
    assert names == {"gauge", "wmp", "eigen", "minorization"}


def test_hopf_suite_flags_planted_supersolution():
    gop = discretize(KILLED, UNIT, 5e-3)
    pot = make_resolvent_subsolution(gop, ONE, 1.0)
    bad = make_user_subsolution(UNIT, lambda y: -pot.inside(y), lambda y: np.zeros(len(y)), killing=1.0,
                                sup_probe_points=gop.nodes, exterior_sup=0.0)
    res = hopf_suite(KILLED, UNIT, [[0.3], [0.5]], 2000, CFG, h=5e-3, extra={"planted": bad})
    assert res["verdict"] == FAIL
    assert not res["weak"]["planted"]["pass"]
