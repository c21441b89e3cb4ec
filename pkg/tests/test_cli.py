import json
import shutil
import subprocess
from pathlib import Path

import pytest

from hopflab.cli import ConfigError, load_config, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BROWNIAN = {
    "operator": {"dim": 1, "diffusion": [[1.0]], "killing": 1.0},
    "domain": {"type": "interval", "a": 0.0, "b": 1.0},
    "task": {"type": "verify", "weak_times": [0.1]},
    "numeric": {"dt": 0.001, "n": 1500, "h": 0.005, "seed": 5, "probes": [[0.2], [0.5], [0.8]]},
}
STABLE_SIM = {
    "operator": {"dim": 1, "levy": {"type": "isotropic_stable", "order": 1.0}},
    "domain": {"type": "interval", "a": -1.0, "b": 1.0},
    "task": {"type": "simulate", "x0": [0.0], "dump_records": True},
    "numeric": {"dt": 0.001, "n": 3000, "seed": 11},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def run(tmp_path, cfg, *extra, out="out"):
    path = cfg if isinstance(cfg, Path) else write(tmp_path, cfg)
    return main(["--config", str(path), "--out", str(tmp_path / out), *extra])


def test_verify_brownian_passes(tmp_path, capsys):
    assert run(tmp_path, BROWNIAN) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["status"] == 0 and summary["task"] == "verify"
    assert "hopflab verify: PASS" in capsys.readouterr().out
    assert (tmp_path / "out" / "report.txt").exists()


def test_injected_supersolution_is_violation(tmp_path, capsys):
    cfg = json.loads(json.dumps(BROWNIAN))
    cfg["task"]["inject_supersolution"] = True
    assert run(tmp_path, cfg) == 2
    out = capsys.readouterr().out
    assert "VIOLATION" in out and "injected-supersolution" in out


@pytest.mark.parametrize("mutate", [
    lambda c: c["numeric"].__setitem__("dt", -0.1),
    lambda c: c["operator"].__setitem__("colour", "red"),
    lambda c: c["domain"].__setitem__("type", "torus"),
])
def test_invalid_config_exit_one(tmp_path, capsys, mutate):
    cfg = json.loads(json.dumps(BROWNIAN))
    mutate(cfg)
    assert run(tmp_path, cfg) == 1
    assert "error" in capsys.readouterr().err


def test_schema_errors_name_the_path(tmp_path):
    cfg = json.loads(json.dumps(BROWNIAN))
    cfg["numeric"]["dt"] = -0.1
    with pytest.raises(ConfigError, match="numeric"):
        load_config(write(tmp_path, cfg))


def test_grid_refuses_three_dimensions(tmp_path, capsys):
    cfg = {
        "operator": {"dim": 3, "diffusion": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]},
        "domain": {"type": "ball", "center": [0, 0, 0], "radius": 1.0},
        "task": {"type": "eigen"},
        "numeric": {"h": 0.1},
    }
    assert run(tmp_path, cfg) == 1
    assert "d <= 2" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "nope.json")]) == 1


def test_deterministic_across_workers(tmp_path):
    path = write(tmp_path, STABLE_SIM)
    assert main(["--config", str(path), "--out", str(tmp_path / "w1"), "--workers", "1", "--format", "both"]) == 0
    assert main(["--config", str(path), "--out", str(tmp_path / "w4"), "--workers", "4", "--format", "both"]) == 0
    for name in ("summary.json", "records.csv"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w4" / name).read_bytes()
    meta1 = json.loads((tmp_path / "w1" / "meta.json").read_text())
    meta4 = json.loads((tmp_path / "w4" / "meta.json").read_text())
    assert meta1["workers"] == 1 and meta4["workers"] == 4 and "timestamp" in meta1
    assert "timestamp" not in (tmp_path / "w1" / "summary.json").read_text()


def test_seed_override_changes_result(tmp_path):
    path = write(tmp_path, STABLE_SIM)
    main(["--config", str(path), "--out", str(tmp_path / "a")])
    main(["--config", str(path), "--out", str(tmp_path / "b"), "--seed", "12"])
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert b["config"]["numeric"]["seed"] == 12
    assert a["result"] != b["result"]


def test_format_json_only_skips_csv(tmp_path):
    assert run(tmp_path, STABLE_SIM, "--format", "json") == 0
    assert not list((tmp_path / "out").glob("*.csv"))


def test_eigen_task_and_cache_hit(tmp_path):
    cfg = {
        "operator": {"dim": 1, "levy": {"type": "isotropic_stable", "order": 1.0}},
        "domain": {"type": "interval", "a": -1.0, "b": 1.0},
        "task": {"type": "eigen", "window": 0.1},
        "numeric": {"h": 0.01},
    }
    assert run(tmp_path, cfg, "--format", "both", out="e1") == 0
    assert run(tmp_path, cfg, out="e2") == 0
    assert not json.loads((tmp_path / "e1" / "meta.json").read_text())["cache"]["hit"]
    assert json.loads((tmp_path / "e2" / "meta.json").read_text())["cache"]["hit"]
    lam1 = json.loads((tmp_path / "e1" / "summary.json").read_text())["result"]["lambda"]
    lam2 = json.loads((tmp_path / "e2" / "summary.json").read_text())["result"]["lambda"]
    assert lam1 == lam2
    assert (tmp_path / "e1" / "eigenpair.csv").exists()


def test_shipped_configs_validate():
    for p in sorted(CONFIGS.glob("*.json")):
        load_config(p)


@pytest.mark.skipif(shutil.which("hopflab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["hopflab", "--config", str(write(tmp_path, STABLE_SIM)), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "summary.json").exists()
