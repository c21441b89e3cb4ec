"""Command-line front end.

Exit status: 0 all checks pass, 2 a bound or audit is violated, 3 a check
could not decide, 1 any error (including schema violations).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
import warnings
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .cache import EigenCache, cache_key, export_eigenpair_csv
from .domain import domain_from_dict
from .doob import minorization_certificate, minorization_phi_check, qsd, resolvent_chain, tv_ergodicity, write_profile_csv
from .functional import default_grid_step, gauge, resolvent_apply, resolvent_identity_check
from .generator import GeneratorSpec, et_certificate_jump, et_certificate_symbol, symbol
from .sampler import PathConfig, simulate_batch
from .spectral import GridError, boundary_scaling_fit, discretize, iu_ratio, principal_eigenpair
from .subsolution import make_resolvent_subsolution, make_user_subsolution
from .verify import FAIL, INCONCLUSIVE, hopf_suite, write_report_csv

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION, EXIT_INCONCLUSIVE = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def load_schema():
    return json.loads(resources.files("hopflab").joinpath("config.schema.json").read_text())


def load_config(path):
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"  {'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("configuration does not match the schema:\n" + "\n".join(lines))
    return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _named_function(name, domain):
    lo, hi = (float(v[0]) for v in domain.bounding_box)
    mid, width = 0.5 * (lo + hi), hi - lo

    def first(y):
        return np.asarray(y, dtype=float).reshape(len(y), -1)[:, 0]

    table = {
        "one": lambda y: np.ones(len(y)),
        "window": lambda y: (np.abs(first(y) - mid) < 0.1 * width).astype(float),
        "cos2": lambda y: np.cos(np.pi * (first(y) - mid) / width) ** 2,
    }
    return table[name]


class Run:
    def __init__(self, cfg, out, workers, fmt):
        self.cfg = cfg
        self.spec = GeneratorSpec.from_dict(cfg["operator"])
        self.domain = domain_from_dict(cfg["domain"])
        if self.domain.dim != self.spec.dim:
            raise ConfigError("operator and domain dimensions differ")
        self.task = cfg["task"]
        num = cfg.get("numeric", {})
        self.num = num
        self.n = int(num.get("n", 10000))
        self.seed = int(num.get("seed", 0))
        self.path_cfg = PathConfig(
            dt=float(num.get("dt", 1e-3)),
            t_max=float(num.get("t_max", 50.0)),
            seed=self.seed,
            bridge_correction=bool(num.get("bridge_correction", True)),
        )
        self.h = num.get("h")
        self.workers = workers
        self.out = Path(out)
        formats = cfg.get("output", {}).get("formats", ["json", "csv"])
        self.formats = {"json", "csv"} if fmt == "both" else ({fmt} if fmt else set(formats))
        self.formats.add("json")  # the summary is always written
        self.meta = {}
        self.report_lines = []

    @property
    def probes(self):
        pr = self.num.get("probes")
        if pr is None:
            lo, hi = self.domain.bounding_box
            return (0.5 * (np.asarray(lo) + np.asarray(hi))).reshape(1, -1)
        return np.asarray(pr, dtype=float).reshape(-1, self.spec.dim)

    def grid_step(self):
        return float(self.h) if self.h is not None else default_grid_step(self.domain)

    def csv(self, name):
        return self.out / name if "csv" in self.formats else None

    def note(self, line):
        self.report_lines.append(line)

    def grid(self):
        if self.spec.dim > 2:
            raise ConfigError("the grid oracle is limited to d <= 2")
        gop = discretize(self.spec, self.domain, self.grid_step())
        cache = EigenCache()
        key = cache_key(self.spec, self.domain, gop.h)
        try:
            pair, hit = cache.get_or_compute(key, lambda: principal_eigenpair(gop))
        except OSError as exc:
            raise RuntimeError(f"eigenpair cache unavailable: {exc}") from exc
        self.meta["cache"] = {"key": key, "hit": hit, "directory": str(cache.directory)}
        return gop, pair

    # tasks ------------------------------------------------------------------
    def task_symbol(self):
        d = self.spec.dim
        xi = np.asarray(self.task.get("xi", [[1.0] * d, [2.0] * d]), dtype=float).reshape(-1, d)
        x = self.probes[0]
        p = np.atleast_1d(symbol(self.spec, x, xi))
        cert = et_certificate_symbol(self.spec, float(self.task.get("radius", 1.0)), probes=self.probes)
        jump = et_certificate_jump(self.spec, self.domain)
        self.note(f"symbol at x={x.tolist()}: " + ", ".join(f"{v.real:.6g}{v.imag:+.6g}i" for v in p))
        self.note(f"exit-time certificate (symbol): {cert['status']}; (jump mass): {jump}")
        return EXIT_OK, {"x": x, "xi": xi, "symbol_re": p.real, "symbol_im": p.imag, "et_symbol": cert,
                         "et_jump": bool(jump)}

    def task_simulate(self):
        x0 = np.asarray(self.task.get("x0", self.probes[0]), dtype=float).reshape(-1)
        batch = simulate_batch(self.spec, self.domain, x0, self.path_cfg, self.n, workers=self.workers)
        summ = batch.summary()
        if self.task.get("dump_records") and self.csv("records.csv"):
            batch.to_csv(self.csv("records.csv"))
        self.note(f"mean exit time {summ['mean_tau']:.6g} +/- {summ['stderr_tau']:.2g} over {summ['n']} paths")
        self.note(f"exit classes: {summ['exit_classes']}")
        status = EXIT_VIOLATION if summ["outside_range"] else EXIT_OK
        return status, {"x0": x0, "batch": summ}

    def task_gauge(self):
        rows = []
        for x in self.probes:
            v = gauge(self.spec, self.domain, x, self.n, self.path_cfg, self.workers)
            rows.append({"x": x, "gauge": v, "w": 1.0 - v.value})
            self.note(f"v({x.tolist()}) = {v.value:.6g} +/- {3 * v.stderr:.2g}")
        return EXIT_OK, {"probes": rows}

    def task_resolvent(self):
        alpha = float(self.task.get("alpha", 1.0))
        f = _named_function(self.task.get("f", "one"), self.domain)
        rows = []
        for x in self.probes:
            est = resolvent_apply(self.spec, self.domain, f, alpha, x, self.n, self.path_cfg, workers=self.workers)
            rows.append({"x": x, "estimate": est})
            self.note(f"R_{alpha:g} f({x.tolist()}) = {est.value:.6g} +/- {est.halfwidth:.2g}")
        out = {"alpha": alpha, "probes": rows}
        status = EXIT_OK
        if "beta" in self.task:
            rep = resolvent_identity_check(self.spec, self.domain, f, alpha, float(self.task["beta"]), self.probes,
                                           self.n, self.path_cfg, self.h, workers=self.workers)
            out["identity"] = rep
            status = EXIT_OK if rep["pass"] else EXIT_VIOLATION
            self.note(f"resolvent identity: grid residual {rep['grid_residual']:.3g}, "
                      f"{'pass' if rep['pass'] else 'FAIL'}")
        return status, out

    def task_eigen(self):
        gop, pair = self.grid()
        out = {"lambda": pair.lam, "gap": pair.gap, "nodes": gop.size, "h": gop.h}
        window = float(self.task.get("window", 0.05))
        try:
            out["boundary_fit"] = boundary_scaling_fit(pair, self.domain, window)
        except GridError as exc:
            out["boundary_fit"] = {"error": str(exc)}
        out["iu"] = [iu_ratio(gop, pair, t) for t in self.task.get("times", [0.1, 0.5, 1.0])]
        if self.csv("eigenpair.csv"):
            export_eigenpair_csv(self.csv("eigenpair.csv"), pair)
        self.note(f"principal eigenvalue {pair.lam:.10g} on {gop.size} nodes (h={gop.h:g})")
        return EXIT_OK, out

    def task_qsd(self):
        gop, pair = self.grid()
        tol = self.num.get("tolerances", {}).get("qsd_target", 1e-6)
        res = qsd(gop, pair, target=tol)
        if self.csv("qsd_profile.csv"):
            write_profile_csv(self.csv("qsd_profile.csv"), res["times"], res["profile"], ("t", "tv"))
        self.note(f"conditional-law TV reaches {res['final']:.3g} (monotone: {res['monotone']})")
        out = {"lambda": pair.lam, "final": res["final"], "monotone": res["monotone"], "profile": res["profile"],
               "times": res["times"], "pi_density": res["pi_density"]}
        return (EXIT_OK if res["converged"] else EXIT_INCONCLUSIVE), out

    def task_minorize(self):
        gop, pair = self.grid()
        alpha = float(self.task.get("alpha", 1.0))
        if not alpha > 0:
            raise ConfigError("minorize needs alpha > 0")
        cert = minorization_certificate(gop, alpha)
        phi = minorization_phi_check(cert, pair)
        tv = tv_ergodicity(resolvent_chain(gop, pair, alpha))
        if self.csv("tv_profile.csv"):
            write_profile_csv(self.csv("tv_profile.csv"), tv["steps"], tv["profile"])
        ok = cert.valid and tv["rho"] < 1 and phi["holds"]
        self.note(f"certificate slack {cert.slack:.3g}, nu mass {cert.nu_mass:.4g}, c_min {phi['c_min']:.4g}")
        self.note(f"TV rate rho = {tv['rho']:.6g} (R^2 {tv['r2']:.6f})")
        return (EXIT_OK if ok else EXIT_VIOLATION), {
            "certificate": cert.to_dict(), "c_min": phi["c_min"], "rho": tv["rho"], "r2": tv["r2"],
            "tv_profile": tv["profile"],
        }

    def task_verify(self):
        extra = {}
        if self.task.get("inject_supersolution"):
            gop = discretize(self.spec, self.domain, self.grid_step())
            pot = make_resolvent_subsolution(gop, _named_function("one", self.domain), 1.0)
            extra["injected-supersolution"] = make_user_subsolution(
                self.domain,
                lambda x: -pot.inside(x),
                lambda x: np.zeros(len(np.asarray(x).reshape(len(x), -1))),
                killing=1.0,
                sup_probe_points=gop.nodes,
                exterior_sup=0.0,
            )
        res = hopf_suite(self.spec, self.domain, self.probes, self.n, self.path_cfg, self.grid_step(),
                         self.workers, extra=extra, weak_times=tuple(self.task.get("weak_times", [0.1])))
        if self.csv("hopf.csv"):
            write_report_csv(self.csv("hopf.csv"), res["reports"])
        for rep in res["reports"]:
            line = f"{rep.bound:40s} {rep.verdict}"
            if rep.verdict == FAIL:
                bad = [r["x"] for r in rep.rows if r["verdict"] == FAIL and len(r["x"])]
                line += f" at probes {bad}" if bad else " (sup over D)"
            self.note(line)
        for name, wk in res["weak"].items():
            self.note(f"weak-subsolution test [{name}]: {'pass' if wk['pass'] else 'FAIL'}"
                      + ("" if wk["pass"] else f" at {[r['x'] for r in wk['rows'] if not r['pass']]}"))
        status = {FAIL: EXIT_VIOLATION, INCONCLUSIVE: EXIT_INCONCLUSIVE}.get(res["verdict"], EXIT_OK)
        return status, {
            "verdict": res["verdict"],
            "lambda": res["lambda"],
            "reports": [r.to_dict() for r in res["reports"]],
            "weak": res["weak"],
        }

    def task_report_suite(self):
        parts, statuses = {}, []
        for name in ("eigen", "qsd", "minorize", "verify"):
            self.note(f"== {name}")
            st, out = getattr(self, f"task_{name}")()
            parts[name] = {"status": st, **out}
            statuses.append(st)
        return combine_status(statuses), parts

    def execute(self):
        handler = getattr(self, "task_" + self.task["type"].replace("-", "_"))
        return handler()


def combine_status(statuses):
    if EXIT_VIOLATION in statuses:
        return EXIT_VIOLATION
    if EXIT_INCONCLUSIVE in statuses:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def run(config_path, seed=None, workers=None, out=None, fmt=None) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        cfg.setdefault("numeric", {})["seed"] = int(seed)
    nworkers = int(workers if workers is not None else cfg.get("numeric", {}).get("workers", 1))
    out_dir = out or cfg.get("output", {}).get("directory", "hopflab_out")
    r = Run(cfg, out_dir, nworkers, fmt)
    r.out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        status, result = r.execute()
    summary = {
        "task": r.task["type"],
        "status": status,
        "config": cfg,
        "result": result,
        "warnings": sorted({str(w.message) for w in caught}),
    }
    (r.out / "summary.json").write_text(dump_json(summary))
    meta = {
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "workers": nworkers,
        "version": __version__,
        "config_path": str(config_path),
        **r.meta,
    }
    (r.out / "meta.json").write_text(dump_json(meta))
    verdict = {EXIT_OK: "PASS", EXIT_VIOLATION: "VIOLATION", EXIT_INCONCLUSIVE: "INCONCLUSIVE"}[status]
    text = [f"hopflab {r.task['type']}: {verdict}", *r.report_lines, *(f"warning: {w}" for w in summary["warnings"])]
    (r.out / "report.txt").write_text("\n".join(text) + "\n")
    print("\n".join(text))
    return status


def build_parser():
    p = argparse.ArgumentParser(prog="hopflab", description="Hopf-lemma verification for Lévy-type operators.")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override numeric.seed")
    p.add_argument("--workers", type=int, help="worker threads for path simulation")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--format", choices=["json", "csv", "both"], help="artifact formats")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args.config, args.seed, args.workers, args.out, args.format)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # any failure is reported, never swallowed into a verdict
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
