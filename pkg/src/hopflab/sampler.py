"""Path simulation for the canonical process until exit from D.

Every path owns a PCG64 stream seeded from ``SeedSequence(seed,
spawn_key=(path_index,))``. Paths are advanced together in vectorised
Euler steps, but each one only ever consumes its own stream, in a fixed
number of uniforms per step. numpy draws doubles sequentially, so the
values a path sees do not depend on how its buffer is refilled, on which
other paths share the batch, or on the worker split.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .domain import Domain, ExitClass, ExtendedBoundary
from .estimate import Estimate, mean_estimate
from .generator import (
    CompoundPoisson,
    Constant,
    GeneratorSpec,
    IsotropicStable,
    compensator_moment,
    generator_apply,
    range_of_nonlocality,
    sphere_area,
)

__all__ = [
    "PathConfig",
    "Occupation",
    "ExitRecord",
    "BatchResult",
    "simulate_exit",
    "simulate_batch",
    "martingale_residual",
    "positive_stable",
    "stable_increments",
    "path_generator",
]

_HALF_ULP = 2.0**-54
_BUFFER_ELEMENTS = 2**22


@dataclass(frozen=True)
class PathConfig:
    """Discretisation of one path. ``stable_step_rule`` is ``"exact"`` or ``"truncation"``."""

    dt: float = 1e-3
    t_max: float = 50.0
    seed: int = 0
    bridge_correction: bool = True
    stable_step_rule: str = "exact"
    delta_cut: float = 0.1
    max_jumps_per_step: int = 4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.stable_step_rule not in ("exact", "truncation"):
            raise ValueError(f"unknown stable step rule {self.stable_step_rule!r}")
        if self.stable_step_rule == "truncation" and not 0 < self.delta_cut <= 1:
            raise ValueError("delta_cut must lie in (0, 1]")

    def replace(self, **kw):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return PathConfig(**d)


@dataclass(frozen=True)
class Occupation:
    """Pathwise functional int_0^{tau} e^{-alpha t} [e_c(t)] f(X_t) dt."""

    f: Callable
    alpha: float = 0.0
    killed: bool = True


@dataclass(frozen=True)
class ExitRecord:
    tau: float
    x_exit: np.ndarray
    c_integral: float
    e_c: float
    occ: tuple = ()
    censored: bool = False
    exit_class: ExitClass = ExitClass.NONE


@dataclass
class BatchResult:
    """Struct-of-arrays view of a batch of exit records.

    ``x_exit`` holds the stopping position: the exit point, or the position at
    ``t_max`` for censored paths.
    """

    tau: np.ndarray
    x_exit: np.ndarray
    c_integral: np.ndarray
    e_c: np.ndarray
    occ: np.ndarray
    censored: np.ndarray
    exit_class: np.ndarray
    seed: int
    cfg: PathConfig = field(repr=False, default=None)
    jump_truncations: int = 0

    @property
    def n(self):
        return self.tau.size

    def __len__(self):
        return self.n

    def record(self, i) -> ExitRecord:
        return ExitRecord(
            tau=float(self.tau[i]),
            x_exit=self.x_exit[i].copy(),
            c_integral=float(self.c_integral[i]),
            e_c=float(self.e_c[i]),
            occ=tuple(float(v) for v in self.occ[i]),
            censored=bool(self.censored[i]),
            exit_class=ExitClass(int(self.exit_class[i])),
        )

    def records(self):
        for i in range(self.n):
            yield self.record(i)

    def summary(self) -> dict:
        n = self.n
        counts = {c.name.lower(): int(np.sum(self.exit_class == int(c))) for c in ExitClass}
        tau = mean_estimate(self.tau, self.seed)
        return {
            "n": n,
            "seed": self.seed,
            "mean_tau": tau.value,
            "stderr_tau": tau.stderr,
            "censored": int(self.censored.sum()),
            "censored_fraction": float(self.censored.mean()),
            "exit_classes": counts,
            "outside_range": counts["outside_range"],
            "jump_truncations": int(self.jump_truncations),
        }

    def to_csv(self, path):
        """Raw dump: tau,x_exit,c_integral,e_c,censored,exit_class (17 significant digits)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau", "x_exit", "c_integral", "e_c", "censored", "exit_class"])
            for i in range(self.n):
                xe = " ".join(f"{v:.17g}" for v in self.x_exit[i])
                w.writerow(
                    [
                        f"{self.tau[i]:.17g}",
                        xe,
                        f"{self.c_integral[i]:.17g}",
                        f"{self.e_c[i]:.17g}",
                        int(self.censored[i]),
                        ExitClass(int(self.exit_class[i])).name,
                    ]
                )


# ---------------------------------------------------------------------------
# random variates from uniforms


def path_generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def positive_stable(a: float, u_angle, u_exp):
    """Positive a-stable variable with Laplace transform exp(-lambda^a), 0 < a < 1.

    Kanter's representation from two uniforms on (0, 1).
    """
    U = np.pi * u_angle
    E = -np.log(u_exp)
    return (np.sin(a * U) / np.sin(U) ** (1.0 / a)) * (np.sin((1.0 - a) * U) / E) ** ((1.0 - a) / a)


def stable_increments(order, scale, dt, uniforms, dim):
    """Rotationally symmetric stable increments with E exp(i xi.J) = exp(-dt scale |xi|^order).

    Sub-Gaussian construction J = (scale dt)^{1/order} sqrt(2 A) G with A
    positive (order/2)-stable. ``uniforms`` has shape (n, 2 + dim).
    """
    A = positive_stable(order / 2.0, uniforms[:, 0], uniforms[:, 1])
    G = special.ndtri(uniforms[:, 2 : 2 + dim])
    return (scale * dt) ** (1.0 / order) * np.sqrt(2.0 * A)[:, None] * G


def _poisson_count(mean, u, cap):
    """Inverse-CDF Poisson draw capped at ``cap``; returns (count, truncated)."""
    k = np.zeros(mean.shape, dtype=np.int64)
    p = np.exp(-mean)
    cdf = p.copy()
    for j in range(1, cap + 1):
        more = u > cdf
        k[more] = j
        p = p * mean / j
        cdf = cdf + p
    return k, u > cdf


# ---------------------------------------------------------------------------
# the stepping kernel


class _Layout:
    """Uniform slots consumed per step, fixed for a given (spec, cfg, domain)."""

    def __init__(self, spec: GeneratorSpec, cfg: PathConfig, domain):
        d = spec.dim
        pos = 0
        self.gauss = slice(pos, pos + d) if spec.has_diffusion else None
        pos += d if spec.has_diffusion else 0
        self.bridge = None
        if spec.has_diffusion and cfg.bridge_correction and domain is not None:
            self.bridge = pos
            pos += 1
        levy = spec.levy
        self.stable = None
        self.trunc = None
        self.cp = None
        K = cfg.max_jumps_per_step
        if isinstance(levy, IsotropicStable):
            if cfg.stable_step_rule == "exact":
                self.stable = slice(pos, pos + 2 + d)
                pos += 2 + d
            else:
                # count, K jumps of (d direction + 1 radius), d small-jump gaussians
                self.trunc = pos
                pos += 1 + K * (d + 1) + d
        elif isinstance(levy, CompoundPoisson):
            self.cp = pos
            pos += 1 + K * levy.n_uniforms
        self.width = max(pos, 1)


def _sqrt_psd(q):
    w, v = np.linalg.eigh(q)
    return (v * np.sqrt(np.clip(w, 0, None))[..., None, :]) @ np.swapaxes(v, -1, -2)


def _simulate_paths(spec, domain, x0, cfg, indices, occs, eb):
    d = spec.dim
    n = len(indices)
    lay = _Layout(spec, cfg, domain)
    m = lay.width
    gens = [path_generator(cfg.seed, i) for i in indices]

    tau = np.full(n, cfg.t_max)
    x_stop = np.empty((n, d))
    c_int_out = np.zeros(n)
    occ_out = np.zeros((n, len(occs)))
    censored = np.ones(n, dtype=bool)
    klass = np.full(n, int(ExitClass.NONE), dtype=np.int8)
    truncations = 0

    alive = np.arange(n)
    x = np.tile(np.asarray(x0, dtype=float).reshape(1, d), (n, 1))
    cint = np.zeros(n)
    occ = np.zeros((n, len(occs)))

    levy = spec.levy
    const_q = isinstance(spec.diffusion, Constant)
    sq_const = _sqrt_psd(spec.diffusion.value) if (const_q and spec.has_diffusion) else None
    comp_moment = None
    if isinstance(levy, CompoundPoisson):
        comp_moment = compensator_moment(levy)
        if not np.any(comp_moment):
            comp_moment = None
    need_drift = spec.has_drift or comp_moment is not None
    if isinstance(levy, IsotropicStable) and cfg.stable_step_rule == "truncation":
        kc = levy.density_constant(d) * sphere_area(d)
        s = levy.order
        trunc_rate = kc * cfg.delta_cut ** (-s) / s
        small_var = kc * cfg.delta_cut ** (2 - s) / ((2 - s) * d)

    n_steps = max(1, int(math.ceil(cfg.t_max / cfg.dt - 1e-9)))
    buf = None
    rows = None
    j = 0
    K = 0

    for k in range(n_steps):
        if alive.size == 0:
            break
        t0 = k * cfg.dt
        h = min(cfg.dt, cfg.t_max - t0)
        if buf is None or j >= K:
            K = int(np.clip(_BUFFER_ELEMENTS // max(alive.size * m, 1), 16, 4096))
            K = min(K, n_steps - k)
            buf = np.stack([gens[i].random((K, m)) for i in alive]) + _HALF_ULP
            rows = np.arange(alive.size)
            j = 0
        u = buf[rows, j]
        j += 1

        A = alive.size
        cx = spec.killing(x) if spec.has_killing else None
        fvals = [o.f(x) for o in occs]

        # continuous part
        xn = x.copy()
        if need_drift:
            b = spec.drift(x) if spec.has_drift else 0.0
            if comp_moment is not None:
                b = b - levy.rate(x)[:, None] * comp_moment
            xn += b * h
        if lay.gauss is not None:
            z = special.ndtri(u[:, lay.gauss])
            if sq_const is not None:
                xn += math.sqrt(h) * z @ sq_const.T
            else:
                sq = _sqrt_psd(spec.diffusion(x))
                xn += math.sqrt(h) * np.einsum("nij,nj->ni", sq, z)

        exit_t = np.full(A, np.nan)
        exit_x = np.full((A, d), np.nan)
        done = np.zeros(A, dtype=bool)
        if domain is not None:
            out = ~domain.contains(xn)
            if np.any(out):
                din = domain.distance(x[out])
                dout = domain.boundary_distance(xn[out])
                frac = din / np.maximum(din + dout, 1e-300)
                exit_t[out] = t0 + frac * h
                exit_x[out] = domain.project(xn[out])
                done |= out
            if lay.bridge is not None:
                cand = ~done
                if np.any(cand):
                    xa, xb = x[cand], xn[cand]
                    da, db = domain.distance(xa), domain.distance(xb)
                    nearer = np.where((db <= da)[:, None], xb, xa)
                    nrm = domain.normal(nearer)
                    q = spec.diffusion(xa)
                    var = np.einsum("ni,nij,nj->n", nrm, q, nrm) * h
                    with np.errstate(divide="ignore", over="ignore"):
                        p = np.exp(-2.0 * da * db / np.where(var > 0, var, np.inf))
                    hit = u[cand, lay.bridge] < p
                    if np.any(hit):
                        ids = np.flatnonzero(cand)[hit]
                        exit_t[ids] = t0 + 0.5 * h
                        exit_x[ids] = domain.project(nearer[hit])
                        done[ids] = True

        # jump part
        if lay.stable is not None:
            live = ~done
            if np.any(live):
                jmp = stable_increments(levy.order, levy.scale, h, u[live, lay.stable], d)
                xn[live] += jmp
                if domain is not None:
                    ids = np.flatnonzero(live)
                    out = ~domain.contains(xn[ids])
                    ids = ids[out]
                    exit_t[ids] = t0 + h
                    exit_x[ids] = xn[ids]
                    done[ids] = True
        elif lay.trunc is not None or lay.cp is not None:
            live = ~done
            Kj = cfg.max_jumps_per_step
            if lay.cp is not None:
                base = lay.cp
                rate = levy.rate(x) * h
                q_u = levy.n_uniforms
            else:
                base = lay.trunc
                rate = np.full(A, trunc_rate * h)
                q_u = d + 1
                live_ids = np.flatnonzero(live)
                if live_ids.size:
                    gsm = special.ndtri(u[live_ids, base + 1 + Kj * q_u : base + 1 + Kj * q_u + d])
                    xn[live_ids] += math.sqrt(small_var * h) * gsm
                    if domain is not None:
                        out = ~domain.contains(xn[live_ids])
                        ids = live_ids[out]
                        exit_t[ids] = t0 + h
                        exit_x[ids] = xn[ids]
                        done[ids] = True
                        live = ~done
            counts, trunc = _poisson_count(rate, u[:, base], Kj)
            truncations += int(np.sum(trunc & live))
            for r in range(Kj):
                ids = np.flatnonzero(live & ~done & (counts > r))
                if ids.size == 0:
                    break
                uj = u[ids, base + 1 + r * q_u : base + 1 + (r + 1) * q_u]
                if lay.cp is not None:
                    jump = levy.transform(uj)
                else:
                    g = special.ndtri(uj[:, :d])
                    g /= np.linalg.norm(g, axis=1, keepdims=True)
                    jump = g * (cfg.delta_cut * uj[:, d : d + 1] ** (-1.0 / levy.order))
                xn[ids] += jump
                if domain is not None:
                    out = ~domain.contains(xn[ids])
                    hit = ids[out]
                    exit_t[hit] = t0 + h
                    exit_x[hit] = xn[hit]
                    done[hit] = True

        # time integrals, coefficients frozen at the left endpoint
        span = np.where(done, exit_t - t0, h)
        if occs:
            c_rate = cx if cx is not None else 0.0
            for jo, o in enumerate(occs):
                rate_o = o.alpha + (c_rate if o.killed else 0.0)
                rate_o = np.broadcast_to(np.asarray(rate_o, dtype=float), (A,))
                start = -o.alpha * t0 - (cint if o.killed else 0.0)
                with np.errstate(invalid="ignore", divide="ignore"):
                    integ = np.where(rate_o > 0, -np.expm1(-rate_o * span) / np.where(rate_o > 0, rate_o, 1.0), span)
                occ[:, jo] += np.exp(start) * fvals[jo] * integ
        if cx is not None:
            cint += cx * span

        if np.any(done):
            gidx = alive[done]
            tau[gidx] = exit_t[done]
            x_stop[gidx] = exit_x[done]
            c_int_out[gidx] = cint[done]
            occ_out[gidx] = occ[done]
            censored[gidx] = False
            keep = ~done
            alive = alive[keep]
            rows = rows[keep]
            x = xn[keep]
            cint = cint[keep]
            occ = occ[keep]
        else:
            x = xn

    if alive.size:
        x_stop[alive] = x
        c_int_out[alive] = cint
        occ_out[alive] = occ

    exited = ~censored
    if np.any(exited) and eb is not None:
        klass[exited] = eb.classify(x_stop[exited])
    return {
        "tau": tau,
        "x_exit": x_stop,
        "c_integral": c_int_out,
        "e_c": np.exp(-c_int_out),
        "occ": occ_out,
        "censored": censored,
        "exit_class": klass,
        "truncations": truncations,
    }


def _check_start(domain, x0, dim):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != dim:
        raise ValueError(f"start point has dimension {x0.size}, operator has {dim}")
    if domain is not None and not bool(domain.contains(x0.reshape(1, dim))[0]):
        raise ValueError(f"start point {x0.tolist()} is not inside the domain")
    return x0


def simulate_batch(
    spec: GeneratorSpec,
    domain: Optional[Domain],
    x0,
    cfg: PathConfig,
    n: int,
    workers: int = 1,
    occupations: Sequence[Occupation] = (),
    eps_geom: Optional[float] = None,
) -> BatchResult:
    """Simulate ``n`` independent paths from ``x0``; ``domain=None`` means no exit.

    Output is bitwise identical for any ``workers``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x0 = _check_start(domain, x0, spec.dim)
    eb = ExtendedBoundary(domain, range_of_nonlocality(spec, domain), eps_geom) if domain is not None else None
    workers = max(1, int(workers))
    chunks = [c for c in np.array_split(np.arange(n), workers) if c.size]
    occs = list(occupations)
    if len(chunks) == 1:
        parts = [_simulate_paths(spec, domain, x0, cfg, chunks[0], occs, eb)]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda c: _simulate_paths(spec, domain, x0, cfg, c, occs, eb), chunks))
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0] if k != "truncations"}
    return BatchResult(
        tau=cat["tau"],
        x_exit=cat["x_exit"],
        c_integral=cat["c_integral"],
        e_c=cat["e_c"],
        occ=cat["occ"],
        censored=cat["censored"],
        exit_class=cat["exit_class"],
        seed=int(cfg.seed),
        cfg=cfg,
        jump_truncations=sum(p["truncations"] for p in parts),
    )


def simulate_exit(
    spec: GeneratorSpec,
    domain: Optional[Domain],
    x0,
    cfg: PathConfig,
    path_index: int = 0,
    occupations: Sequence[Occupation] = (),
) -> ExitRecord:
    """One path, using the stream of ``path_index`` under ``cfg.seed``."""
    x0 = _check_start(domain, x0, spec.dim)
    eb = ExtendedBoundary(domain, range_of_nonlocality(spec, domain)) if domain is not None else None
    res = _simulate_paths(spec, domain, x0, cfg, np.array([path_index]), list(occupations), eb)
    return ExitRecord(
        tau=float(res["tau"][0]),
        x_exit=res["x_exit"][0],
        c_integral=float(res["c_integral"][0]),
        e_c=float(res["e_c"][0]),
        occ=tuple(float(v) for v in res["occ"][0]),
        censored=bool(res["censored"][0]),
        exit_class=ExitClass(int(res["exit_class"][0])),
    )


def martingale_residual(spec, f, x0, t, n, cfg: Optional[PathConfig] = None, Af=None, workers=1) -> Estimate:
    """Mean of f(X_t) - f(X_0) - int_0^t Af(X_r) dr over whole-space paths."""
    cfg = (cfg or PathConfig()).replace(t_max=float(t))
    x0 = np.asarray(x0, dtype=float).reshape(1, spec.dim)
    if Af is None:
        def Af(x):
            return generator_apply(spec, f, x)
    batch = simulate_batch(spec, None, x0[0], cfg, n, workers=workers, occupations=[Occupation(Af, 0.0, False)])
    resid = f(batch.x_exit) - f(x0)[0] - batch.occ[:, 0]
    return mean_estimate(resid, cfg.seed)
