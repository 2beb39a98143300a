"""Command line: ``mintime {list,solve,flow,verify,report}``.

Artifacts go to ``--out-dir`` (default ``$MINTIME_OUT_DIR`` or
``./mintime-out``).  Every command is deterministic for a fixed scenario,
override list and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION
from .dynamics import certify_class_L, certify_growth, certify_lipschitz
from .errors import ConfigError, CostateCollapseError, MintimeError
from .hamflow import arc_box, check_dual_bounds, synthesize_from_target, write_arcs
from .hjbsolve import ValueField, read_field, solve_min_time, write_field
from .scenarios import Scenario, flow_seeds, list_scenarios, load_scenario
from .theorems import (VerificationReport, analyze_point, max_norm_segment, sample_points,
                       verify_dimension, verify_epi_correspondence, verify_pointwise,
                       verify_propagation, verify_regularity)

OUT_ENV = "MINTIME_OUT_DIR"
REGISTRY_ENV = "MINTIME_SCENARIO_DIR"
EXIT_FAIL = 4
CHECKS = ("pointwise", "epigraph", "dimension", "propagation", "dual_bounds", "regularity",
          "certificates")
K0_MARGIN = 0.05
K0_FLOOR = 1e-6


def solve_scenario(sc: Scenario) -> ValueField:
    s = sc.solver
    return solve_min_time(sc.dynamics(), sc.target(), sc.grid(), tau=s["tau"],
                          vel_samples=int(s["vel_samples"]), max_sweeps=int(s["max_sweeps"]),
                          tol=float(s["tol"]), scheme=s["scheme"])


def synthesize_arcs(sc: Scenario, field: ValueField):
    """Arcs from the scenario's target normals, each certified against
    ``field``.  Seeds whose costate collapses are skipped."""
    flow = sc.verify["flow"]
    F, K = sc.dynamics(), sc.target()
    arcs = []
    for z, nu in flow_seeds(sc):
        try:
            arc = synthesize_from_target(F, K, z, nu, float(flow["horizon"]), float(flow["dt"]),
                                         field, flow["cert_tol"], int(flow["samples"]))
        except CostateCollapseError:
            continue
        arcs.append(arc)
    return arcs


def _certified(sc, arcs):
    want = int(sc.verify["flow"]["arcs"])
    return [a for a in arcs if a.certified][:want], want


def dual_bound_reports(sc: Scenario, arcs, K0=None):
    """Costate growth bounds on every arc with ``K0`` certified over the
    states the arcs visit (sampled Lipschitz constant, padded by 5%)."""
    if not arcs:
        return []
    if K0 is None:
        lo, hi = arc_box(arcs)
        K0 = max(certify_lipschitz(sc.dynamics(), (lo, hi), seed=int(sc.verify["seed"]))
                 * (1.0 + K0_MARGIN), K0_FLOOR)
    records = []
    for k, arc in enumerate(arcs):
        rep = check_dual_bounds(arc, K0)
        scale = float(np.exp(K0 * arc.horizon))
        records.append({"arc": k, "seed": arc.seed, **rep.to_json(),
                        "violation": rep.worst / scale})
    return [VerificationReport.from_records("dual_bounds", sc.id, records, 1e-6,
                                            notes=f"K0 = {K0:.6g}; violations divided by exp(K0 T)")]


def certificate_reports(sc: Scenario):
    cfg = sc.verify["certificates"]
    if cfg["box"] is None:
        raise ConfigError("the certificates check needs verify.certificates.box")
    box = (np.asarray(cfg["box"][0], float), np.asarray(cfg["box"][1], float))
    F = sc.dynamics()
    seed = int(sc.verify["seed"])
    pairs = int(cfg["pairs"])
    consts = F.constants()
    reports = []

    def add(name, value, bound):
        bound = float("inf") if bound is None else float(bound) * (1.0 + 1e-9) + 1e-12
        reports.append(VerificationReport.from_records(
            f"certificates.{name}", sc.id, [{"violation": float(value)}], bound))

    add("lipschitz", certify_lipschitz(F, box, pairs, seed), consts.get("L"))
    add("growth", certify_growth(F, box, pairs, seed), consts.get("gamma"))
    add("class_L", certify_class_L(F, box, pairs, seed=seed), cfg["class_L_max"])
    return reports


def _point_sets(sc: Scenario, field: ValueField):
    """Points for the pointwise checks and, separately, the off-target points
    used for the epigraph and dimension checks (with optional segments)."""
    v = sc.verify
    seed = int(v["seed"])
    pts_cfg = v["points"]
    region = pts_cfg.get("region")
    free, excluded = [], 0
    if int(pts_cfg.get("count", 0)) > 0:
        s = sample_points(field, int(pts_cfg["count"]), seed, region, pts_cfg.get("t_range"))
        free += list(s.points)
        excluded += s.excluded
    free += [np.asarray(p, float) for p in v["fixed_points"]]
    corners = [np.asarray(p, float) for p in v["corners"]]
    target = []
    if int(v["target_points"]) > 0:
        target = list(sample_points(field, int(v["target_points"]), seed, on_target=True).points)
    off = [x for x in free if field.values[field.grid.nearest_index(x)] > 0] + corners
    segments = [None] * (len(off) - len(corners)) + [max_norm_segment(c) for c in corners]
    return free + corners + target, off, segments, excluded


def _horizontal_found(sc, analyses):
    """One record per point: fails when no horizontal direction was found."""
    records = [{"point": pa.x.tolist(), "horizontal": int(len(pa.horizontal_accepted)),
                "violation": 0.0 if len(pa.horizontal_accepted) else 1.0} for pa in analyses]
    return [VerificationReport.from_records("pointwise.horizontal_found", sc.id, records, 0.0)]


def verify_scenario(sc: Scenario, field: ValueField, arcs=None, cones=None):
    """Run the scenario's configured checks; returns the report list.
    ``cones``, when a list, receives the per-point cone estimates."""
    v = sc.verify
    checks = list(v["checks"])
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise ConfigError(f"unknown check(s) {sorted(unknown)}; known: {list(CHECKS)}")
    F, tol = sc.dynamics(), sc.tolerances()
    reports = []
    if {"pointwise", "epigraph", "dimension"} & set(checks):
        points, off, segments, excluded = _point_sets(sc, field)
        analyses = {}

        def analysed(pts):
            out = []
            for x in pts:
                key = tuple(np.round(x, 12))
                if key not in analyses:
                    analyses[key] = analyze_point(field, F, x, tol)
                out.append(analyses[key])
            return out

        if "pointwise" in checks and points:
            pas = analysed(points)
            reports += verify_pointwise(field, F, points, tol, sc.id, excluded, pas)
            if v["expect_horizontal"]:
                reports += _horizontal_found(sc, pas)
        if "epigraph" in checks and off:
            reports += verify_epi_correspondence(field, F, off, tol, sc.id, excluded,
                                                 analysed(off), segments)
        if "dimension" in checks and off:
            reports += verify_dimension(field, F, off, tol, sc.id, excluded, analysed(off))
        if cones is not None:
            for pa in analysed(points):
                cones.append({"point": pa.x.tolist(), "value": float(pa.value),
                              "sublevel": pa.sublevel.to_json(), "epigraph": pa.epi.to_json()})
    if {"propagation", "dual_bounds"} & set(checks):
        if arcs is None:
            arcs = synthesize_arcs(sc, field)
        kept, want = _certified(sc, arcs)
        reports.append(VerificationReport.from_records(
            "flow.certified", sc.id,
            [{"requested": want, "certified": len(kept), "synthesized": len(arcs),
              "violation": float(max(want - len(kept), 0))}], 0.0))
        if "propagation" in checks and kept:
            reports += verify_propagation(field, F, kept, tol, sc.id,
                                          int(v["flow"]["times"]),
                                          float(v["flow"]["constancy_tol"]))
        if "dual_bounds" in checks:
            reports += dual_bound_reports(sc, kept)
    if "regularity" in checks:
        region = v["regularity"]["region"]
        if region is None:
            g = sc.grid()
            region = [list(g.lower), list(g.upper)]
        reports += verify_regularity(field, F, region, sc.regularity(), tol, sc.id)
    if "certificates" in checks:
        reports += certificate_reports(sc)
    if v["only"]:
        reports = [r for r in reports if any(r.theorem.startswith(p) for p in v["only"])]
    return reports


# --------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, str):
        return v
    return f"{v:.3e}"


def summary_table(rows):
    """Fixed-width table of summary dicts."""
    head = ("scenario", "check", "samples", "excluded", "worst", "tolerance", "result")
    body = [(r["scenario"], r["theorem"], str(r["samples"]), str(r["excluded"]),
             _fmt(r["worst"]), _fmt(r["tolerance"]), "pass" if r["pass"] else "FAIL")
            for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h)
              for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def _diagnostics(reports):
    out = []
    for rep in reports:
        if rep.passed or not rep.records:
            continue
        worst = max(rep.records, key=lambda r: r["violation"])
        where = {k: worst[k] for k in ("point", "arc", "t") if k in worst}
        out.append(f"FAIL {rep.theorem}: worst {rep.worst:.3e} > {rep.tolerance:.3e} at "
                   f"{json.dumps(where, sort_keys=True)}")
    return out


def write_jsonl(sc: Scenario, reports, path):
    head = {"schema_version": SCHEMA_VERSION, "kind": "run", "scenario": sc.id,
            "config": sc.to_json()}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for rep in reports:
            for obj in rep.lines():
                fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


# --------------------------------------------------------------------------
# commands


def _out_dir(args):
    out = Path(args.out_dir or os.environ.get(OUT_ENV) or "mintime-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _field_for(args, sc):
    if args.field and args.command != "solve":
        path = Path(args.field)
        if not path.is_file():
            raise ConfigError(f"field file {path} does not exist")
        return read_field(path, path.with_suffix(".json"))
    return solve_scenario(sc)


def _scenario(args):
    name = args.scenario or args.name
    if not name:
        raise ConfigError("a scenario id or file is required")
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"verify.seed={int(args.seed)}")
    return load_scenario(name, args.registry or os.environ.get(REGISTRY_ENV), overrides)


def cmd_list(args):
    rows = list_scenarios(args.registry or os.environ.get(REGISTRY_ENV))
    width = max(len(r[0]) for r in rows)
    for sid, desc in rows:
        print(f"{sid.ljust(width)}  {desc}")
    return 0


def cmd_solve(args):
    sc = _scenario(args)
    field = solve_scenario(sc)
    out = _out_dir(args)
    csv = Path(args.field) if args.field else out / f"{sc.id}.field.csv"
    write_field(field, csv, csv.with_suffix(".json"))
    print(f"{sc.id}: {field.sweeps} sweeps, residual {field.residual:.3e}, field written to {csv}")
    return 0


def cmd_flow(args):
    sc = _scenario(args)
    field = _field_for(args, sc)
    arcs = synthesize_arcs(sc, field)
    out = _out_dir(args)
    path = Path(args.arc) if args.arc else out / f"{sc.id}.arcs.csv"
    write_arcs(arcs, path)
    meta = {"schema_version": SCHEMA_VERSION, "scenario": sc.id,
            "arcs": [{"index": k, "seed": a.seed, "certified": bool(a.certified),
                      "residual": a.residual, "switch_times": list(map(float, a.switch_times))}
                     for k, a in enumerate(arcs)]}
    _write_json(meta, path.with_suffix(".json"))
    good = sum(bool(a.certified) for a in arcs)
    print(f"{sc.id}: {len(arcs)} arcs, {good} certified, written to {path}")
    return 0


def cmd_verify(args):
    sc = _scenario(args)
    field = _field_for(args, sc)
    cones = [] if args.cones else None
    reports = verify_scenario(sc, field, cones=cones)
    out = _out_dir(args)
    write_jsonl(sc, reports, out / f"{sc.id}.verify.jsonl")
    if args.cones:
        _write_json({"schema_version": SCHEMA_VERSION, "scenario": sc.id, "cones": cones},
                    args.cones)
    print(summary_table([r.summary() for r in reports]))
    for line in _diagnostics(reports):
        print(line)
    ok = all(r.passed for r in reports)
    print(f"{sc.id}: {'all checks pass' if ok else 'verification failed'}")
    return 0 if ok else EXIT_FAIL


def cmd_report(args):
    out = _out_dir(args)
    rows = []
    for path in sorted(out.glob("*.verify.jsonl")):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                obj = json.loads(line)
                if obj.get("kind") == "summary":
                    rows.append(obj)
    if not rows:
        print(f"no verification runs found in {out}")
        return 0
    print(summary_table(rows))
    failed = sorted({r["scenario"] for r in rows if not r["pass"]})
    print(f"{len(rows)} checks; failing scenarios: {', '.join(failed) if failed else 'none'}")
    return 0


COMMANDS = {"list": cmd_list, "solve": cmd_solve, "flow": cmd_flow, "verify": cmd_verify,
            "report": cmd_report}


def build_parser():
    parser = argparse.ArgumentParser(prog="mintime",
                                     description="Minimum time functions: solve, synthesize, verify.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("name", nargs="?", help="scenario id or path to a scenario JSON file")
    common.add_argument("--scenario", help="scenario id or path (alternative to the positional)")
    common.add_argument("--out-dir", help=f"artifact directory (default ${OUT_ENV} or ./mintime-out)")
    common.add_argument("--registry", help=f"directory of scenario files (default ${REGISTRY_ENV})")
    common.add_argument("--field", help="field CSV: written by solve, read by flow and verify")
    common.add_argument("--arc", help="arc CSV written by flow")
    common.add_argument("--cones", help="JSON file for the cone estimates of verify")
    common.add_argument("--threads", type=int, help="cap on worker threads of compiled kernels")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted-path override, repeatable")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("list", "list known scenarios"),
                            ("solve", "solve for the minimum time function"),
                            ("flow", "synthesize Hamiltonian arcs from the target"),
                            ("verify", "run the scenario's verification checks"),
                            ("report", "summarize previous verify runs")):
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def _cap_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(argv=None) -> int:
    """Parse ``argv`` and execute; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        _cap_threads(args.threads)
        return COMMANDS[args.command](args)
    except MintimeError as exc:
        print(f"mintime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
