"""Scenario registry: built-in problems, JSON scenario files and dotted-path
overrides, plus the builders that turn a scenario into solver inputs."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import Multifunction, multifunction_from_json
from .errors import ConfigError
from .hjbsolve import GridSpec, TargetSet, cfl_bound, target_from_json
from .theorems import RegularityConfig, Tolerances

VERIFY_DEFAULTS = {
    "seed": 0,
    "checks": ["pointwise", "epigraph", "dimension"],
    "only": None,
    "tolerances": {},
    "points": {"count": 20, "t_range": [0.5, 1.5], "region": None},
    "target_points": 0,
    "fixed_points": [],
    "corners": [],
    "expect_horizontal": False,
    "flow": {"normals": 24, "sectors": None, "horizon": 1.0, "dt": 0.01, "arcs": 10,
             "times": 5, "constancy_tol": 1e-3, "samples": 21, "cert_tol": None},
    "regularity": {"region": None, "t_grid": [0.25, 0.5, 0.75, 1.0], "epi_t_range": None,
                   "phi_samples": 24, "epi_samples": 40, "min_separation": None,
                   "phi_tol": "inf", "epi_tol": "inf", "convex_up_to": None},
    "certificates": {"box": None, "pairs": 200, "class_L_max": None},
}

SOLVER_DEFAULTS = {"tau": None, "vel_samples": 64, "max_sweeps": 2000, "tol": 1e-9,
                   "scheme": "cell-exit"}

_DI = {"form": "affine_control", "f_expr": ["x2", "0"], "g_expr": [["0"], ["1"]],
       "U": {"type": "polytope", "vertices": [[-1], [1]]}, "L": 1.0, "gamma": 1.0}

BUILTIN = {
    "eikonal": {
        "description": "unit-speed isotropic dynamics and a ball target; T is the distance to the ball",
        "dim": 2,
        "dynamics": {"form": "isotropic", "radius_expr": "1", "L": 0.0, "gamma": 1.0},
        "target": {"type": "ball", "center": [0, 0], "radius": 0.25},
        "grid": {"lower": [-2, -2], "upper": [2, 2], "cells": 201},
        "verify": {
            "checks": ["pointwise", "epigraph", "dimension", "propagation", "dual_bounds",
                       "regularity"],
            "target_points": 5,
            "flow": {"normals": 24, "horizon": 1.0, "dt": 0.01, "constancy_tol": 1e-12},
            "regularity": {"region": [[-1.5, -1.5], [1.5, 1.5]], "t_grid": [0.25, 0.5, 0.75, 1.0],
                           "epi_t_range": [0.2, 1.0], "min_separation": 0.2,
                           "phi_tol": 1.0, "epi_tol": 1.0},
        },
    },
    "square": {
        "description": "velocities in the square [-1,1]^2 and a point-sized target; T is the max-norm",
        "dim": 2,
        "dynamics": {"form": "linear_drift", "A": [[0, 0], [0, 0]],
                     "U": {"type": "box", "lower": [-1, -1], "upper": [1, 1]},
                     "L": 0.0, "gamma": 1.4142135623730951},
        "target": {"type": "ball", "center": [0, 0], "radius": 0.02},
        "grid": {"lower": [-2, -2], "upper": [2, 2], "cells": 201},
        "verify": {
            "points": {"count": 10, "t_range": [0.5, 1.5]},
            "corners": [[0.6, 0.6], [-0.8, 0.8], [-1.0, -1.0], [1.2, -1.2], [0.9, 0.9]],
        },
    },
    "double-integrator": {
        "description": "x1' = x2, x2' = u with |u| <= 1 and a small ball target",
        "dim": 2,
        "dynamics": _DI,
        "target": {"type": "ball", "center": [0, 0], "radius": 0.05},
        "grid": {"lower": [-2, -2], "upper": [2, 2], "cells": 161},
        "verify": {
            "checks": ["pointwise", "epigraph", "dimension", "propagation", "dual_bounds",
                       "regularity"],
            "tolerances": {"tol_h": 0.5, "sigma_factor": 0.1, "subgrad_factor": 0.1,
                           "angle": 0.15},
            "flow": {"normals": 6, "sectors": [[150, 172], [330, 352]], "horizon": 1.0,
                     "dt": 0.001, "constancy_tol": 1e-3},
            "regularity": {"region": [[-1.5, -1.5], [1.5, 1.5]], "t_grid": [0.5, 1.0, 1.5],
                           "epi_t_range": [0.2, 1.5], "min_separation": 0.2},
        },
    },
    "linear-rotation": {
        "description": "quarter-turn rotation drift plus unit-ball controls and a ball target",
        "dim": 2,
        "dynamics": {"form": "linear_drift", "A": [[0, -1], [1, 0]],
                     "U": {"type": "ball", "center": [0, 0], "radius": 1},
                     "L": 1.0, "gamma": 1.0},
        "target": {"type": "ball", "center": [0, 0], "radius": 0.3},
        "grid": {"lower": [-2, -2], "upper": [2, 2], "cells": 201},
        "verify": {
            "checks": ["pointwise", "epigraph", "dimension", "propagation", "dual_bounds",
                       "regularity", "certificates"],
            "tolerances": {"tol_h": 0.1},
            "flow": {"normals": 24, "horizon": 1.0, "dt": 0.001, "constancy_tol": 1e-6},
            "regularity": {"region": [[-1.8, -1.8], [1.8, 1.8]],
                           "t_grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
                           "epi_t_range": [0.2, 1.0], "min_separation": 0.2},
            "certificates": {"box": [[-1.5, -1.5], [1.5, 1.5]], "class_L_max": 1e-9},
        },
    },
    "affine-2d": {
        "description": "control-affine dynamics f(x) + g(x) u with a state-dependent input matrix",
        "dim": 2,
        "dynamics": {"form": "affine_control", "f_expr": ["0.5*x2", "-0.5*x1"],
                     "g_expr": [["1", "0"], ["0.2*x1", "1"]],
                     "U": {"type": "box", "lower": [-1, -1], "upper": [1, 1]}, "gamma": 1.5},
        "target": {"type": "ball", "center": [0, 0], "radius": 0.25},
        "grid": {"lower": [-2, -2], "upper": [2, 2], "cells": 161},
        "verify": {"points": {"count": 10, "t_range": [0.3, 0.8]}},
    },
    "non-petrov": {
        "description": "double integrator steered to a point; T grows like a square root near it",
        "dim": 2,
        "dynamics": _DI,
        "target": {"type": "point", "center": [0, 0]},
        "grid": {"lower": [-2, -2], "upper": [2, 2], "cells": 161},
        "verify": {
            "checks": ["pointwise"],
            "only": ["pointwise.target_horizontal", "pointwise.target_flat_normal_horizontal",
                     "pointwise.horizontal_found"],
            "points": {"count": 0},
            "fixed_points": [[0.0, 0.0]],
            "expect_horizontal": True,
        },
    },
    "quadratic-radius": {
        "description": "isotropic speed 1 + min(|x|^2, 1): class L without being affine in x",
        "dim": 2,
        "dynamics": {"form": "isotropic", "radius_expr": "1 + min(x1*x1 + x2*x2, 1)",
                     "gamma": 2.0},
        "target": {"type": "ball", "center": [0, 0], "radius": 0.25},
        "grid": {"lower": [-2, -2], "upper": [2, 2], "cells": 201},
        "verify": {
            "checks": ["pointwise", "epigraph", "dimension", "certificates"],
            "points": {"count": 10, "t_range": [0.2, 0.5]},
            "certificates": {"box": [[-0.7, -0.7], [0.7, 0.7]]},
        },
    },
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Scenario:
    id: str
    doc: dict

    @property
    def description(self):
        return self.doc.get("description", "")

    @property
    def dim(self):
        return int(self.doc["dim"])

    @property
    def verify(self):
        return _merge(VERIFY_DEFAULTS, self.doc.get("verify", {}))

    @property
    def solver(self):
        return _merge(SOLVER_DEFAULTS, self.doc.get("solver", {}))

    def dynamics(self) -> Multifunction:
        return multifunction_from_json(self.doc["dynamics"], self.dim)

    def target(self) -> TargetSet:
        return target_from_json(self.doc["target"])

    def grid(self) -> GridSpec:
        return GridSpec.from_json(self.doc["grid"])

    def tolerances(self) -> Tolerances:
        doc = self.verify["tolerances"]
        known = set(Tolerances.__dataclass_fields__)
        bad = set(doc) - known
        if bad:
            raise ConfigError(f"unknown tolerance field(s): {sorted(bad)}")
        return Tolerances(**doc)

    def regularity(self) -> RegularityConfig:
        doc = dict(self.verify["regularity"])
        doc.pop("region", None)
        for key in ("phi_tol", "epi_tol"):
            doc[key] = float(doc[key])
        for key in ("t_grid", "epi_t_range"):
            if doc.get(key) is not None:
                doc[key] = tuple(float(v) for v in doc[key])
        return RegularityConfig(seed=int(self.verify["seed"]), **doc)

    def validate(self):
        """Build every component once so malformed scenarios fail early."""
        for key in ("dim", "dynamics", "target", "grid"):
            if key not in self.doc:
                raise ConfigError(f"scenario {self.id!r} lacks field {key!r}")
        if "seed" not in self.verify:
            raise ConfigError(f"scenario {self.id!r} lacks a seed")
        F, K, grid = self.dynamics(), self.target(), self.grid()
        if not (F.dim == K.dim == grid.dim == self.dim):
            raise ConfigError(f"scenario {self.id!r} mixes dimensions")
        if not cfl_bound(F, grid) > 0:
            raise ConfigError(f"scenario {self.id!r} admits no positive step")
        self.tolerances()
        return self

    def to_json(self):
        return {"id": self.id, **self.doc}


def _scenario_files(registry):
    if registry is None:
        return []
    path = Path(registry)
    if not path.is_dir():
        raise ConfigError(f"scenario registry {registry} is not a directory")
    return sorted(path.glob("*.json"))


def read_scenario_file(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"scenario file {path} must hold a JSON object")
    doc = dict(doc)
    sid = str(doc.pop("id", Path(path).stem))
    return Scenario(sid, doc)


def list_scenarios(registry=None):
    """``(id, description)`` rows: built-ins first, then registry files."""
    rows = [(sid, doc["description"]) for sid, doc in BUILTIN.items()]
    for path in _scenario_files(registry):
        sc = read_scenario_file(path)
        rows.append((sc.id, sc.description))
    return rows


def load_scenario(name, registry=None, overrides=()) -> Scenario:
    """Resolve a built-in id, a registry id or a path to a JSON file, then
    apply ``key=value`` overrides."""
    if name in BUILTIN:
        sc = Scenario(name, copy.deepcopy(BUILTIN[name]))
    else:
        sc = None
        for path in _scenario_files(registry):
            cand = read_scenario_file(path)
            if cand.id == name:
                sc = cand
                break
        if sc is None and Path(name).is_file():
            sc = read_scenario_file(name)
        if sc is None:
            raise ConfigError(f"unknown scenario {name!r}")
    for item in overrides:
        apply_override(sc.doc, item)
    return sc.validate()


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, item: str):
    """Set ``a.b.c=value`` in ``doc``; the value is parsed as JSON when
    possible.  A bare tolerance name is shorthand for
    ``verify.tolerances.<name>``."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    parts = key.split(".")
    if len(parts) == 1:
        if key in Tolerances.__dataclass_fields__:
            parts = ["verify", "tolerances", key]
        elif key == "seed":
            parts = ["verify", "seed"]
    node = doc
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
        node = nxt
    node[parts[-1]] = _parse_value(raw)


def flow_seeds(scenario: Scenario):
    """Target boundary points and outward normals from which arcs start."""
    flow = scenario.verify["flow"]
    K = scenario.target()
    count = int(flow["normals"])
    sectors = flow["sectors"] or [[0.0, 360.0 * (1 - 1.0 / count)]]
    seeds = []
    for lo, hi in sectors:
        for deg in np.linspace(lo, hi, count):
            th = np.deg2rad(deg)
            nu = np.array([np.cos(th), np.sin(th)])
            body = K.bodies[0]
            z = body.support(nu)[1]
            seeds.append((z, nu))
    return seeds


__all__ = ["Scenario", "BUILTIN", "list_scenarios", "load_scenario", "apply_override",
           "read_scenario_file", "flow_seeds"]
