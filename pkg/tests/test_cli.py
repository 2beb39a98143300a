import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from mintime import SCHEMA_VERSION
from mintime.cli import run, verify_scenario
from mintime.errors import ConfigError
from mintime.hjbsolve import read_field
from mintime.scenarios import (BUILTIN, apply_override, flow_seeds, list_scenarios,
                               load_scenario)

REPO_SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
BUILTIN_IDS = ["eikonal", "square", "double-integrator", "linear-rotation", "affine-2d",
               "non-petrov", "quadratic-radius"]


def small(name="eikonal", **extra):
    """Override list for a quick pointwise-only run on a coarse grid."""
    out = ['grid.cells=[81,81]', 'verify.checks=["pointwise"]', "verify.points.count=2",
           "verify.target_points=0"]
    return out + [f"{k}={v}" for k, v in extra.items()]


def cli(args, tmp_path, capsys):
    code = run(args + ["--out-dir", str(tmp_path)])
    out = capsys.readouterr()
    return code, out.out, out.err


# registry

def test_builtin_scenarios_listed(capsys):
    assert [r[0] for r in list_scenarios()] == BUILTIN_IDS
    assert run(["list"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 7 and lines[0].startswith("eikonal ")


def test_registry_adds_and_empty_registry_keeps_builtins(tmp_path, capsys):
    assert len(list_scenarios(tmp_path)) == 7
    shutil.copy(REPO_SCENARIOS / "two-ball-ridge.json", tmp_path)
    rows = list_scenarios(tmp_path)
    assert len(rows) == 8 and rows[-1][0] == "two-ball-ridge"
    assert run(["list", "--registry", str(tmp_path)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 8


def test_every_builtin_validates():
    for sid in BUILTIN:
        sc = load_scenario(sid)
        assert sc.dim == 2 and sc.description
        assert sc.to_json()["id"] == sid


def test_scenario_by_path_and_registry_id(tmp_path):
    path = REPO_SCENARIOS / "two-ball-ridge.json"
    assert load_scenario(str(path)).id == "two-ball-ridge"
    assert load_scenario("two-ball-ridge", REPO_SCENARIOS).target().bodies[1].center[0] == 0.6


def test_overrides():
    doc = {"verify": {"tolerances": {}}}
    apply_override(doc, "tol_h=0.2")
    apply_override(doc, "seed=7")
    apply_override(doc, "grid.cells=[11, 11]")
    apply_override(doc, "description=plain text")
    assert doc["verify"] == {"tolerances": {"tol_h": 0.2}, "seed": 7}
    assert doc["grid"] == {"cells": [11, 11]} and doc["description"] == "plain text"
    for bad in ("novalue", "=3", "description.x=1"):
        with pytest.raises(ConfigError):
            apply_override(doc, bad)


def test_unknown_tolerance_and_missing_fields():
    with pytest.raises(ConfigError):
        load_scenario("eikonal", overrides=["verify.tolerances.bogus=1"])
    with pytest.raises(ConfigError):
        load_scenario("eikonal", overrides=['dynamics={"form": "isotropic"}'])


def test_flow_seeds_cover_the_sectors():
    sc = load_scenario("double-integrator")
    seeds = flow_seeds(sc)
    assert len(seeds) == 12
    for z, nu in seeds:
        assert np.linalg.norm(z) == pytest.approx(0.05)
        np.testing.assert_allclose(z / 0.05, nu)


# exit codes

def test_config_errors_exit_2(tmp_path, capsys):
    assert cli(["verify", "no-such-scenario"], tmp_path, capsys)[0] == 2
    assert cli(["verify", "eikonal", "--set", "broken"], tmp_path, capsys)[0] == 2
    code, _, err = cli(["solve", "eikonal", "--set", "solver.tau=10"], tmp_path, capsys)
    assert code == 2 and "CFLError" in err
    assert cli(["frobnicate"], tmp_path, capsys)[0] == 2


def test_solver_budget_exit_3(tmp_path, capsys):
    code, _, err = cli(["solve", "eikonal", "--set", "solver.max_sweeps=1"], tmp_path, capsys)
    assert code == 3 and "SolverBudgetError" in err


def test_tight_tolerance_fails_with_diagnostics(tmp_path, capsys):
    args = ["verify", "double-integrator", "--set", "tol_h=1e-6"]
    for item in small():
        args += ["--set", item]
    code, out, _ = cli(args, tmp_path, capsys)
    assert code == 4
    assert "FAIL pointwise.subgradient_h" in out and "verification failed" in out
    rows = [json.loads(l) for l in (tmp_path / "double-integrator.verify.jsonl").read_text().splitlines()]
    bad = [r for r in rows if r["kind"] == "summary" and not r["pass"]]
    assert bad and all(r["tolerance"] == 1e-6 for r in bad if r["theorem"].endswith("_h"))


def test_double_integrator_passes_at_scenario_tolerances(double_integrator):
    sc, field = double_integrator
    reports = verify_scenario(sc, field)
    failing = [r.theorem for r in reports if not r.passed]
    assert not failing
    assert any(r.theorem == "propagation.constancy" for r in reports)


# commands and artifacts

def test_solve_then_verify_from_file(tmp_path, capsys):
    field_path = tmp_path / "f.csv"
    args = ["--field", str(field_path)]
    for item in small():
        args += ["--set", item]
    code, out, _ = cli(["solve", "eikonal"] + args, tmp_path, capsys)
    assert code == 0 and "sweeps" in out
    header = json.loads((tmp_path / "f.json").read_text())
    assert header["schema_version"] == SCHEMA_VERSION and header["residual"] <= 1e-9
    assert read_field(field_path, tmp_path / "f.json").grid.cells == (81, 81)
    code, out, _ = cli(["verify", "eikonal", "--cones", str(tmp_path / "c.json")] + args,
                       tmp_path, capsys)
    assert code == 0 and "all checks pass" in out
    cones = json.loads((tmp_path / "c.json").read_text())
    assert cones["schema_version"] == SCHEMA_VERSION and len(cones["cones"]) == 2
    assert cones["cones"][0]["sublevel"]["dimension"] == 1


def test_missing_field_file_is_config_error(tmp_path, capsys):
    code, _, _ = cli(["verify", "eikonal", "--field", str(tmp_path / "nope.csv")], tmp_path,
                     capsys)
    assert code == 2


def test_flow_writes_arcs(tmp_path, capsys):
    args = ["flow", "eikonal", "--arc", str(tmp_path / "a.csv"), "--set", "grid.cells=[81,81]",
            "--set", "verify.flow.normals=3"]
    code, out, _ = cli(args, tmp_path, capsys)
    assert code == 0 and "3 arcs, 3 certified" in out
    meta = json.loads((tmp_path / "a.json").read_text())
    assert meta["schema_version"] == SCHEMA_VERSION and len(meta["arcs"]) == 3
    assert (tmp_path / "a.csv").read_text().startswith("arc,t,x1,x2,p1,p2,switch\n")


def test_jsonl_objects_carry_schema_and_report_merges(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MINTIME_OUT_DIR", str(tmp_path))
    args = ["verify", "eikonal"]
    for item in small():
        args += ["--set", item]
    assert run(args) == 0
    rows = [json.loads(l) for l in (tmp_path / "eikonal.verify.jsonl").read_text().splitlines()]
    assert rows[0]["kind"] == "run" and rows[0]["config"]["grid"]["cells"] == [81, 81]
    assert all(r["schema_version"] == SCHEMA_VERSION for r in rows)
    capsys.readouterr()
    assert run(["report"]) == 0
    out = capsys.readouterr().out
    assert "pointwise.subgradient_h" in out and "failing scenarios: none" in out


def test_report_on_empty_directory(tmp_path, capsys):
    code, out, _ = cli(["report"], tmp_path, capsys)
    assert code == 0 and "no verification runs" in out


def test_seed_changes_sampled_points(tmp_path, capsys):
    base = ["verify", "eikonal", "--threads", "1"]
    for item in small():
        base += ["--set", item]
    paths = []
    for seed in (1, 2):
        out = tmp_path / str(seed)
        assert run(base + ["--seed", str(seed), "--out-dir", str(out)]) == 0
        paths.append(out / "eikonal.verify.jsonl")
    a, b = (p.read_text() for p in paths)
    assert a != b


def test_verify_is_byte_deterministic(tmp_path):
    base = ["verify", "square"]
    for item in small("square"):
        base += ["--set", item]
    outs = []
    for k in range(2):
        assert run(base + ["--out-dir", str(tmp_path / str(k))]) == 0
        outs.append((tmp_path / str(k) / "square.verify.jsonl").read_bytes())
    assert outs[0] == outs[1]
