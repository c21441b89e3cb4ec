"""Doob transform by the principal eigenfunction, ergodicity and minorization on the grid.

Kernels are node matrices: ``K[i, j]`` is the mass a chain started at node
i puts on node j. Densities against m carry the extra factor 1/h^d.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .spectral import EigenPair, GridError, GridOperator, transition_matrix

__all__ = [
    "DoobChain",
    "MinorizationCertificate",
    "ErgodicityFitError",
    "doob_semigroup",
    "resolvent_chain",
    "tv_ergodicity",
    "qsd",
    "irreducibility_check",
    "irreducibility_report",
    "minorization_certificate",
    "minorization_phi_check",
    "maximal_irreducibility_measure",
    "write_profile_csv",
]


class ErgodicityFitError(ValueError):
    pass


@dataclass
class DoobChain:
    """Resolvent chain K = alpha R_alpha of the phi-transformed process."""

    alpha: float
    kernel: np.ndarray
    base: GridOperator
    pair: EigenPair
    raw_row_sum_error: float = 0.0

    @property
    def row_sum_error(self):
        return float(np.max(np.abs(self.kernel.sum(axis=1) - 1.0)))


@dataclass
class MinorizationCertificate:
    """Witness of R_alpha(i, j) >= psi(i) nu(j) on the nodes.

    ``nu`` holds node masses, so R_alpha f(x_i) >= psi(i) * sum_j f(x_j) nu(j).
    """

    alpha: float
    psi: np.ndarray
    nu: np.ndarray
    slack: float
    anchor: int

    @property
    def nu_mass(self):
        return float(self.nu.sum())

    @property
    def valid(self):
        return bool(self.slack >= 0 and self.nu_mass > 0)

    def rescaled(self, a):
        """The same certificate with psi -> a psi and nu -> nu / a."""
        return MinorizationCertificate(self.alpha, a * self.psi, self.nu / a, self.slack, self.anchor)

    def slack_against(self, green):
        return float(np.min(green - np.outer(self.psi, self.nu)))

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "anchor": self.anchor,
            "slack": self.slack,
            "nu_mass": self.nu_mass,
            "psi_min": float(self.psi.min()),
            "psi_max": float(self.psi.max()),
        }


def doob_semigroup(gop: GridOperator, pair: EigenPair, t: float) -> np.ndarray:
    """Transition matrix of the phi-process: e^{lam t} P_t(x, y) phi(y) / phi(x)."""
    if np.any(pair.phi <= 0):
        raise GridError("phi must be strictly positive")
    if t == 0:
        return np.eye(gop.size)
    E = transition_matrix(gop, t)
    P = np.exp(pair.lam * t) * E * pair.phi[None, :] / pair.phi[:, None]
    if not np.all(np.isfinite(P)):
        raise GridError(f"Doob semigroup overflows at t = {t}")
    return P


def resolvent_chain(gop: GridOperator, pair: EigenPair, alpha: float) -> DoobChain:
    """K = alpha (alpha - L^phi)^{-1} with L^phi = phi^{-1} (L + lam) phi."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    M = gop.size
    G = linalg.solve((alpha - pair.lam) * np.eye(M) - gop.L, np.eye(M))
    K = alpha * G * pair.phi[None, :] / pair.phi[:, None]
    # rows sum to 1 up to the eigen residual; remove that defect so that
    # powers of K stay stochastic to round-off
    sums = K.sum(axis=1)
    K /= sums[:, None]
    return DoobChain(float(alpha), K, gop, pair, float(np.max(np.abs(sums - 1.0))))


def _invariant(K, tol=1e-15, max_iter=100000):
    pi = np.full(K.shape[0], 1.0 / K.shape[0])
    for _ in range(max_iter):
        nxt = pi @ K
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) <= tol:
            return nxt
        pi = nxt
    raise ErgodicityFitError("left power iteration for the invariant law did not converge")


def tv_ergodicity(chain: DoobChain, max_steps: int = 5000, floor: float = 1e-12, skip: int = 3,
                  spectral: bool = False) -> dict:
    """Worst-case total variation of K^n(x, .) from the invariant law.

    The norm is sup_{|f| <= 1} |int f d(mu - pi)|, i.e. the l1 distance. The
    rate rho comes from a least-squares fit of log TV against n after the
    first ``skip`` steps and down to ``floor``.
    """
    K = chain.kernel
    pi = _invariant(K)
    P = K.copy()
    profile = []
    for _ in range(max_steps):
        tv = float(np.max(np.abs(P - pi[None, :]).sum(axis=1)))
        profile.append(tv)
        if tv < floor:
            break
        P = P @ K
    profile = np.asarray(profile)
    n = np.arange(1, profile.size + 1)
    out = {"pi": pi, "profile": profile, "steps": n}
    if profile[0] < floor:
        out.update(rho=0.0, r2=1.0, fit_window=(1, 1))
    else:
        keep = profile >= floor
        lo = skip if keep.sum() - skip >= 3 else 0
        idx = np.nonzero(keep)[0][lo:]
        if idx.size < 2:
            raise ErgodicityFitError("too few profile points above the floor for a rate fit")
        tail = profile[idx[0]:]
        if np.any(np.diff(tail) > 1e-9 * tail[:-1] + 1e-14):
            raise ErgodicityFitError("TV profile is not monotone in the fit window")
        X, Y = n[idx], np.log(profile[idx])
        slope, icpt = np.polyfit(X, Y, 1)
        resid = Y - (slope * X + icpt)
        r2 = 1.0 - resid.var() / Y.var() if idx.size > 2 and Y.var() > 0 else 1.0
        out.update(rho=float(np.exp(slope)), r2=float(r2), fit_window=(int(X[0]), int(X[-1])))
    if spectral:
        mods = np.sort(np.abs(linalg.eigvals(K)))[::-1]
        out["rho_spectral"] = float(mods[1]) if mods.size > 1 else 0.0
    return out


def qsd(gop: GridOperator, pair: EigenPair, times=None, target: float = 1e-6) -> dict:
    """Yaglom limit Pi = phi_hat m and the conditional-law convergence profile.

    profile(t) = max over start nodes of sup_B |P_t(x, B)/P_t(x, D) - Pi(B)|.
    """
    pi_mass = pair.phi_hat * gop.weight
    pi_mass = pi_mass / pi_mass.sum()
    if times is None:
        gap = pair.gap if pair.gap and pair.gap > 0 else pair.lam
        t_end = -np.log(target * 1e-2) / gap
        times = np.linspace(t_end / 64, t_end, 64)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be positive and increasing")
    uniform = np.allclose(np.diff(times), times[0] - 0.0, rtol=1e-9, atol=1e-12)
    step = transition_matrix(gop, times[0]) if uniform else None
    C = None
    profile = []
    for k, t in enumerate(times):
        if uniform:
            C = step.copy() if C is None else C @ step
        else:
            C = transition_matrix(gop, t)
        C = C / C.sum(axis=1, keepdims=True)
        profile.append(0.5 * float(np.max(np.abs(C - pi_mass[None, :]).sum(axis=1))))
    profile = np.asarray(profile)
    monotone = bool(np.all(np.diff(profile) <= 1e-12 + 1e-9 * profile[:-1]))
    return {
        "pi_density": pair.phi_hat / (pair.phi_hat.sum() * gop.weight),
        "pi_mass": pi_mass,
        "times": times,
        "profile": profile,
        "monotone": monotone,
        "final": float(profile[-1]),
        "converged": bool(monotone and profile[-1] < target),
    }


def irreducibility_report(gop: GridOperator) -> dict:
    """Two routes: graph strong connectivity of L, and positivity of (I - L)^{-1}."""
    off = gop.L - np.diag(np.diag(gop.L))
    graph = csr_matrix(off > 0)
    ncomp, _ = connected_components(graph, directed=True, connection="strong")
    R = linalg.solve(np.eye(gop.size) - gop.L, np.eye(gop.size))
    positive = bool(np.all(R > 0))
    return {"components": int(ncomp), "graph": ncomp == 1, "resolvent_positive": positive,
            "resolvent_min": float(R.min() / gop.weight)}


def irreducibility_check(gop: GridOperator) -> bool:
    rep = irreducibility_report(gop)
    if rep["graph"] != rep["resolvent_positive"]:
        raise GridError(f"irreducibility routes disagree: {rep}")
    return bool(rep["graph"])


def _green(gop, alpha):
    return linalg.solve(alpha * np.eye(gop.size) - gop.L, np.eye(gop.size))


def minorization_certificate(gop: GridOperator, alpha: float, candidates: int = 41,
                             green=None) -> MinorizationCertificate:
    """Column-anchored split R_alpha(i, j) >= psi(i) nu(j).

    For an anchor column j*, psi = R_alpha(., j*) and nu(j) = min_i
    R_alpha(i, j) / psi(i). The anchor is chosen among evenly spaced
    candidate columns to maximise the mass of nu.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    G = _green(gop, alpha) if green is None else green
    M = G.shape[0]
    cand = np.unique(np.linspace(0, M - 1, min(candidates, M)).round().astype(int))
    best = None
    for j in cand:
        psi = G[:, j]
        if np.any(psi <= 0):
            continue
        nu = np.min(G / psi[:, None], axis=0) * (1.0 - 1e-12)
        if best is None or nu.sum() > best[2].sum():
            best = (j, psi.copy(), nu)
    if best is None:
        raise GridError("no strictly positive resolvent column; minorization fails")
    j, psi, nu = best
    cert = MinorizationCertificate(float(alpha), psi, nu, 0.0, int(j))
    cert.slack = cert.slack_against(G)
    if not cert.nu_mass > 0:
        raise GridError("minorizing measure is identically zero")
    return cert


def minorization_phi_check(cert: MinorizationCertificate, pair: EigenPair) -> dict:
    """c_min = min psi / phi; (phi, c_min nu) then witnesses the phi-form condition."""
    c_min = float(np.min(cert.psi / pair.phi))
    return {"c_min": c_min, "holds": c_min > 0, "nu_phi": c_min * cert.nu}


def maximal_irreducibility_measure(gop: GridOperator, alpha: float, n_terms: int = 20) -> dict:
    """mu = sum_{n <= N} 2^{-n} int_D K_alpha^n(x, .) dx with K_alpha = alpha R_alpha."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    K = alpha * _green(gop, alpha)
    row = np.full(gop.size, gop.weight)
    mu = np.zeros(gop.size)
    for n in range(1, n_terms + 1):
        row = row @ K
        mu += 0.5**n * row
    total = gop.weight * gop.size
    return {"mu": mu, "tail_bound": float(0.5**n_terms * total), "positive": bool(np.all(mu > 0))}


def write_profile_csv(path, steps, profile, header=("n", "tv")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for a, b in zip(steps, profile):
            w.writerow([f"{a:.17g}", f"{b:.17g}"])


def certificate_json(cert: MinorizationCertificate) -> str:
    return json.dumps(cert.to_dict(), sort_keys=True)
