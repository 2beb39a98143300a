"""Grid solver for the minimum time function and sublevel-set utilities.

The value at a node ``x`` is the fixed point of

    T(x) = min over sampled v in F(x) of  s_v + I[T](x + s_v v),

with ``T = 0`` on the rasterized target and multilinear interpolation ``I``.
By default each velocity is followed until it leaves the cell star of ``x``
(``s_v = min_i dx_i / |v_i|``), so the foot lands on a grid face; a constant
step ``tau`` is available as ``scheme="fixed"``.  Iteration is Gauss-Seidel
with alternating sweep orders, starting from an unreachable value off target.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from . import SCHEMA_VERSION
from ._kernels import bellman_residual, exit_weight_sweep, sweep
from .convexset import Ball, ConvexBody, body_from_json, project
from .directions import direction_grid
from .dynamics import Multifunction, certify_growth
from .errors import CFLError, ConfigError, DomainError, SolverBudgetError

# Unreached nodes start at BIG.  Interpolation can leak part of that sentinel
# into converged values; a node is reported unreachable when the leaked part
# exceeds LEAK_FRACTION of the grid spacing.
BIG = 1e12
CUTOFF = 0.5 * BIG
LEAK_FRACTION = 1e-2


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Uniform node lattice; ``cells`` counts nodes per axis."""

    lower: tuple
    upper: tuple
    cells: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        cells = np.atleast_1d(self.cells)
        if len(cells) == 1 and len(lo) > 1:
            cells = np.repeat(cells, len(lo))
        cells = tuple(int(c) for c in cells)
        if not (len(lo) == len(hi) == len(cells)) or len(lo) not in (1, 2, 3):
            raise ConfigError("grid bounds and cell counts must share a dimension in 1..3")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ConfigError("grid bounds must be strictly ordered")
        if any(c < 8 for c in cells):
            raise ConfigError("grid needs at least 8 cells per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "cells", cells)

    @property
    def dim(self):
        return len(self.cells)

    @property
    def spacing(self):
        return np.array([(h - l) / (c - 1) for l, h, c in zip(self.lower, self.upper, self.cells)])

    @property
    def dx(self):
        return float(self.spacing.max())

    @property
    def size(self):
        return int(np.prod(self.cells))

    def axes(self):
        return [np.linspace(l, h, c) for l, h, c in zip(self.lower, self.upper, self.cells)]

    def nodes(self):
        """Node coordinates in C order, shape ``(size, n)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def node(self, index):
        return np.asarray(self.lower) + np.asarray(index) * self.spacing

    def nearest_index(self, x):
        rel = (np.asarray(x, float) - np.asarray(self.lower)) / self.spacing
        return tuple(int(v) for v in np.clip(np.rint(rel), 0, np.asarray(self.cells) - 1))

    def contains(self, X, margin=0.0):
        X = np.asarray(X, float)
        tol = 1e-12 * max(1.0, float(np.max(np.abs(self.lower + self.upper))))
        return np.all((X >= np.asarray(self.lower) + margin - tol)
                      & (X <= np.asarray(self.upper) - margin + tol), axis=-1)

    def to_json(self):
        return {"lower": list(self.lower), "upper": list(self.upper), "cells": list(self.cells)}

    @classmethod
    def from_json(cls, doc):
        try:
            return cls(doc["lower"], doc["upper"], doc["cells"])
        except KeyError as exc:
            raise ConfigError(f"grid description is missing field {exc}") from None


class TargetSet:
    """Closed target given as a finite union of convex bodies."""

    def __init__(self, bodies, tol: float = 1e-12):
        if isinstance(bodies, ConvexBody):
            bodies = [bodies]
        bodies = list(bodies)
        if not bodies:
            raise ConfigError("target needs at least one body")
        if len({b.dim for b in bodies}) != 1:
            raise ConfigError("target bodies must share a dimension")
        self.bodies = bodies
        self.tol = float(tol)

    @property
    def dim(self):
        return self.bodies[0].dim

    def distance_many(self, X):
        """Euclidean distance from each row of ``X`` to the union."""
        X = np.atleast_2d(np.asarray(X, float))
        out = np.full(len(X), np.inf)
        for body in self.bodies:
            out = np.minimum(out, _body_distance_many(body, X))
        return out

    def distance(self, x):
        return float(self.distance_many(np.asarray(x, float)[None, :])[0])

    def project(self, x):
        x = np.asarray(x, float)
        best, best_d = None, np.inf
        for body in self.bodies:
            y = project(body, x)
            d = np.linalg.norm(y - x)
            if d < best_d:
                best, best_d = y, d
        return best

    def contains(self, x):
        return self.distance(x) <= self.tol

    def rasterize(self, grid: GridSpec):
        """Boolean node mask: distance to the target at most ``dx / 2``.

        A body too thin to cover any node marks the node nearest to it.
        """
        X = grid.nodes()
        mask = np.zeros(grid.size, dtype=bool)
        half = 0.5 * grid.dx * (1.0 + 1e-9)
        for body in self.bodies:
            d = _body_distance_many(body, X, upto=half)
            hit = d <= half
            if not np.any(hit):
                hit = d == d.min()
            mask |= hit
        return mask.reshape(grid.cells)

    def to_json(self):
        docs = [b.to_json() for b in self.bodies]
        return docs[0] if len(docs) == 1 else {"type": "union", "bodies": docs}


def _body_distance_many(body: ConvexBody, X, upto=None):
    """Distances to one body.  With ``upto`` set, rows whose cheap support
    lower bound already exceeds ``upto`` keep that bound instead."""
    if isinstance(body, Ball):
        return np.maximum(np.linalg.norm(X - body.center, axis=1) - body.radius, 0.0)
    n = body.dim
    D = direction_grid(n, 64) if n > 1 else np.array([[1.0], [-1.0]])
    out = np.maximum(np.max(X @ D.T - body.support_value(D)[None, :], axis=1), 0.0)
    todo = np.arange(len(X)) if upto is None else np.flatnonzero(out <= upto)
    for i in todo:
        out[i] = np.linalg.norm(project(body, X[i]) - X[i])
    return out


@dataclass(eq=False)
class ValueField:
    grid: GridSpec
    values: np.ndarray
    target_mask: np.ndarray
    residual: float = 0.0
    sweeps: int = 0
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, float).reshape(self.grid.cells)
        self.target_mask = np.asarray(self.target_mask, bool).reshape(self.grid.cells)
        self.values.setflags(write=False)
        self.target_mask.setflags(write=False)

    @property
    def dx(self):
        return self.grid.dx

    def value_at_index(self, index):
        return float(self.values[tuple(index)])

    def finite_mask(self):
        return np.isfinite(self.values)

    def header(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "grid": self.grid.to_json(),
            "residual": float(self.residual),
            "sweeps": int(self.sweeps),
            "target_nodes": int(self.target_mask.sum()),
            "unreachable_nodes": int(np.isinf(self.values).sum()),
            **{k: self.meta[k] for k in sorted(self.meta)},
        }


def _sweep_orders(n):
    """Sign patterns for the Gauss-Seidel passes, each followed by its
    opposite so information crosses the grid both ways."""
    base = [p for p in itertools.product((1, -1), repeat=n) if p[0] == 1]
    orders = []
    for p in base:
        orders.append(p)
        orders.append(tuple(-v for v in p))
    return np.array(orders, dtype=np.int64)


def cfl_bound(F: Multifunction, grid: GridSpec) -> float:
    """Largest admissible fixed step ``min dx / (gamma (1 + max|x|))``."""
    gamma = F.gamma
    if gamma is None:
        gamma = certify_growth(F, (grid.lower, grid.upper), samples=64)
    corners = np.array(list(itertools.product(*zip(grid.lower, grid.upper))))
    rmax = float(np.linalg.norm(corners, axis=1).max())
    return float(grid.spacing.min() / (max(gamma, 1e-300) * (1.0 + rmax)))


def solve_min_time(F: Multifunction, K: TargetSet, grid: GridSpec, tau: float | None = None,
                   vel_samples: int = 64, max_sweeps: int = 2000, tol: float = 1e-9,
                   scheme: str = "cell-exit", history: list | None = None) -> ValueField:
    """Compute the minimum time function on ``grid``.

    Args:
        tau: fixed step for ``scheme="fixed"``; it must satisfy the CFL bound
            in either scheme and defaults to that bound.
        vel_samples: boundary directions used to sample smooth velocity sets
            (polytope control sets contribute their vertices).
        history: when a list is given, a copy of the values after every sweep
            is appended to it.

    Raises:
        CFLError: ``tau`` outside ``(0, cfl_bound]``.
        SolverBudgetError: no convergence within ``max_sweeps``.
    """
    if F.dim != grid.dim or K.dim != grid.dim:
        raise ConfigError("dynamics, target and grid dimensions differ")
    if vel_samples < 4:
        raise ConfigError("vel_samples must be at least 4")
    if scheme not in ("cell-exit", "fixed"):
        raise ConfigError(f"unknown scheme {scheme!r}")
    bound = cfl_bound(F, grid)
    if tau is None:
        tau = bound
    if not (tau > 0.0 and tau <= bound * (1.0 + 1e-12)):
        raise CFLError(f"step {tau} outside (0, {bound:.6g}]")

    X = grid.nodes()
    vel = np.ascontiguousarray(F.velocity_samples(X, vel_samples), dtype=float)
    mask = K.rasterize(grid).reshape(-1)
    values = np.where(mask, 0.0, BIG)
    shape = np.array(grid.cells, dtype=np.int64)
    strides = np.array([int(np.prod(grid.cells[d + 1:])) for d in range(grid.dim)], dtype=np.int64)
    lower = np.array(grid.lower)
    spacing = grid.spacing
    orders = _sweep_orders(grid.dim)
    cell_exit = scheme == "cell-exit"

    change = np.inf
    done = 0
    converged = False
    while done < max_sweeps:
        change, newly = sweep(values, mask, BIG, vel, lower, spacing, shape, strides,
                          orders[done % len(orders)], float(tau), cell_exit)
        done += 1
        if history is not None:
            history.append(np.where(values < CUTOFF, values, np.inf).reshape(grid.cells))
        if newly == 0 and change <= tol and done >= len(orders):
            converged = True
            break
    if not converged:
        raise SolverBudgetError(f"no convergence after {done} sweeps (last change {change:.3g})",
                                residual=float(change), sweeps=done)
    policy = np.empty(values.size, dtype=np.int64)
    residual = bellman_residual(values, mask, BIG, vel, lower, spacing, shape, strides,
                                float(tau), cell_exit, CUTOFF, policy)
    leak_tol = LEAK_FRACTION * grid.dx
    leak = _exit_weight(mask, policy, vel, lower, spacing, shape, strides, orders, tau, cell_exit,
                        1e-3 * leak_tol / BIG)
    values = np.where((values < CUTOFF) & (leak * BIG <= leak_tol), values, np.inf)
    meta = {"scheme": scheme, "tau": float(tau), "vel_samples": int(vel_samples), "tol": float(tol)}
    return ValueField(grid, values.reshape(grid.cells), mask.reshape(grid.cells),
                      float(residual), done, meta)


def _exit_weight(mask, policy, vel, lower, spacing, shape, strides, orders, tau, cell_exit,
                 floor, max_passes=20000):
    weight = np.where(mask, 0.0, 1.0)
    for k in range(max_passes):
        change = exit_weight_sweep(weight, mask, policy, vel, lower, spacing, shape, strides,
                                   orders[k % len(orders)], float(tau), cell_exit)
        if change <= floor and k + 1 >= len(orders):
            break
    return weight


# --------------------------------------------------------------------------
# evaluation


def eval_T_many(field: ValueField, X) -> np.ndarray:
    """Multilinear interpolation; a corner with positive weight and infinite
    value makes the result infinite."""
    grid = field.grid
    X = np.atleast_2d(np.asarray(X, float))
    if not np.all(grid.contains(X)):
        raise DomainError("query point outside the grid")
    lower = np.asarray(grid.lower)
    rel = (X - lower) / grid.spacing
    cells = np.asarray(grid.cells)
    base = np.clip(np.floor(rel + 1e-9).astype(int), 0, cells - 2)
    frac = np.clip(rel - base, 0.0, 1.0)
    frac[np.abs(frac) < 1e-9] = 0.0
    frac[np.abs(frac - 1.0) < 1e-9] = 1.0
    V = field.values
    out = np.zeros(len(X))
    for corner in itertools.product((0, 1), repeat=grid.dim):
        corner = np.array(corner)
        w = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
        vals = V[tuple((base + corner).T)]
        contrib = np.where(w > 0.0, w * np.where(np.isfinite(vals), vals, 0.0), 0.0)
        out += contrib
        out[(w > 0.0) & ~np.isfinite(vals)] = np.inf
    return out


def eval_T(field: ValueField, x) -> float:
    return float(eval_T_many(field, np.asarray(x, float)[None, :])[0])


def local_lipschitz(field: ValueField, X) -> np.ndarray:
    """Largest finite axis-difference quotient among the corners of the
    cells containing ``X``."""
    grid = field.grid
    X = np.atleast_2d(np.asarray(X, float))
    rel = (X - np.asarray(grid.lower)) / grid.spacing
    cells = np.asarray(grid.cells)
    base = np.clip(np.floor(rel + 1e-9).astype(int), 0, cells - 2)
    V = field.values
    out = np.zeros(len(X))
    for corner in itertools.product((0, 1), repeat=grid.dim):
        corner = np.array(corner)
        a = V[tuple((base + corner).T)]
        for d in range(grid.dim):
            if corner[d] == 1:
                continue
            other = corner.copy()
            other[d] = 1
            b = V[tuple((base + other).T)]
            ok = np.isfinite(a) & np.isfinite(b)
            q = np.where(ok, np.abs(a - b) / grid.spacing[d], 0.0)
            out = np.maximum(out, q)
    return out


# --------------------------------------------------------------------------
# sublevel sets


def neighbor_exceeds(field: ValueField, t: float) -> np.ndarray:
    """Mask of nodes with an axis neighbor above ``t``, infinite, or outside
    the grid."""
    V = np.where(np.isfinite(field.values), field.values, np.inf)
    flag = np.zeros(V.shape, dtype=bool)
    for d in range(V.ndim):
        padded = np.pad(V, [(1, 1) if k == d else (0, 0) for k in range(V.ndim)],
                        constant_values=np.inf)
        lo = np.take(padded, np.arange(0, V.shape[d]), axis=d)
        hi = np.take(padded, np.arange(2, V.shape[d] + 2), axis=d)
        flag |= (lo > t) | (hi > t)
    return flag


def sublevel_points(field: ValueField, t: float):
    """Nodes with ``T <= t`` and a flag marking sublevel boundary nodes.

    Returns:
        ``(points, boundary)`` with ``points`` of shape ``(m, n)``.
    """
    if t < 0:
        raise ConfigError("sublevel threshold must be nonnegative")
    inside = field.values <= t
    boundary = neighbor_exceeds(field, t) & inside
    X = field.grid.nodes()
    flat = inside.reshape(-1)
    return X[flat], boundary.reshape(-1)[flat]


def attainable_points(F: Multifunction, K: TargetSet, t: float, trajectories: int = 256,
                      dt: float = 1e-2, seed: int = 0) -> np.ndarray:
    """Endpoints at time ``t`` of Euler trajectories of ``y' in -F(y)``.

    Trajectory ``k`` starts at the support point of a target body in a
    direction ``d_k`` and always takes the velocity of ``-F(y)`` that goes
    furthest along ``d_k``.
    """
    if trajectories < 1:
        raise ConfigError("trajectories must be at least 1")
    if t < 0 or not dt > 0:
        raise ConfigError("need t >= 0 and dt > 0")
    n = F.dim
    rng = np.random.default_rng(seed)
    if n == 1:
        D = np.array([[1.0], [-1.0]])[np.arange(trajectories) % 2]
    elif n == 2:
        ang = 2 * np.pi * (np.arange(trajectories) + rng.uniform()) / trajectories
        D = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        D = direction_grid(3, max(trajectories, 12))[:trajectories]
    Y = np.empty((trajectories, n))
    for k in range(trajectories):
        body = K.bodies[k % len(K.bodies)]
        Y[k] = body.support(D[k])[1]
    steps = int(np.ceil(t / dt - 1e-12))
    for s in range(steps):
        h = min(dt, t - s * dt)
        _, v = F.max_hamiltonian_many(Y, -D)
        Y = Y - h * v
    return Y


def check_sublevel_convexity(field: ValueField, t: float, pairs: int = 4000, seed: int = 0):
    """Midpoint test on pairs of sublevel boundary nodes.

    A pair fails when the interpolated value at its midpoint exceeds ``t`` by
    more than ``2 * Lip * dx``, with ``Lip`` the local difference quotient of
    the field around the midpoint.

    Returns:
        ``(passed, worst_excess)``; the excess is measured beyond the slack.
    """
    pts, boundary = sublevel_points(field, t)
    B = pts[boundary]
    if len(B) < 2:
        return True, 0.0
    rng = np.random.default_rng(seed)
    total = len(B) * (len(B) - 1) // 2
    if total <= pairs:
        i, j = np.triu_indices(len(B), k=1)
    else:
        i = rng.integers(0, len(B), size=pairs)
        j = rng.integers(0, len(B), size=pairs)
        keep = i != j
        i, j = i[keep], j[keep]
    mids = 0.5 * (B[i] + B[j])
    vals = eval_T_many(field, mids)
    slack = 2.0 * local_lipschitz(field, mids) * field.dx
    excess = vals - t - slack
    worst = float(np.max(excess)) if len(excess) else 0.0
    worst = max(worst, 0.0)
    return worst == 0.0, worst


# --------------------------------------------------------------------------
# serialization


def _fmt(v: float) -> str:
    if np.isinf(v):
        return "inf"
    return repr(float(v))


def write_field(field: ValueField, csv_path, json_path=None):
    """Write one CSV row per node (coordinates then value) and a JSON header."""
    X = field.grid.nodes()
    V = field.values.reshape(-1)
    names = [f"x{d + 1}" for d in range(field.grid.dim)]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["value"])
        for x, v in zip(X, V):
            w.writerow([_fmt(c) for c in x] + [_fmt(v)])
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(field.header(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_field(csv_path, json_path) -> ValueField:
    with open(json_path) as fh:
        header = json.load(fh)
    grid = GridSpec.from_json(header["grid"])
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    values = np.array([float(r[-1]) for r in rows[1:]])
    if values.size != grid.size:
        raise ConfigError("field CSV does not match its header grid")
    meta = {k: header[k] for k in ("scheme", "tau", "vel_samples", "tol") if k in header}
    return ValueField(grid, values.reshape(grid.cells), values.reshape(grid.cells) == 0.0,
                      header.get("residual", 0.0), header.get("sweeps", 0), meta)


def target_from_json(doc) -> TargetSet:
    if isinstance(doc, list):
        return TargetSet([body_from_json(d) for d in doc])
    if isinstance(doc, dict) and doc.get("type") == "union":
        return TargetSet([body_from_json(d) for d in doc["bodies"]])
    return TargetSet([body_from_json(doc)])


__all__: Sequence[str] = [
    "GridSpec", "TargetSet", "ValueField", "solve_min_time", "eval_T", "eval_T_many",
    "sublevel_points", "attainable_points", "check_sublevel_convexity", "write_field",
    "read_field", "cfl_bound",
]
