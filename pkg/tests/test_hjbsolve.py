import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mintime.convexset import Ball, box, singleton
from mintime.dynamics import Isotropic, LinearDrift
from mintime.errors import CFLError, ConfigError, DomainError, SolverBudgetError
from mintime.hjbsolve import (GridSpec, TargetSet, ValueField, attainable_points, cfl_bound,
                              check_sublevel_convexity, eval_T, eval_T_many, read_field,
                              solve_min_time, sublevel_points, target_from_json, write_field)

FAST = settings(max_examples=40, deadline=None)


def double_integrator_time(x1, x2):
    """Closed-form bang-bang time to the origin."""
    s = x1 + x2 * abs(x2) / 2
    if s > 0:
        return x2 + 2 * np.sqrt(x1 + x2 * x2 / 2)
    if s < 0:
        return -x2 + 2 * np.sqrt(-x1 + x2 * x2 / 2)
    return abs(x2)


def small_grid(n=41, half=1.0):
    return GridSpec([-half, -half], [half, half], n)


# grid and target

def test_grid_geometry():
    g = GridSpec([-2, -2], [2, 2], 201)
    assert g.cells == (201, 201) and g.dx == pytest.approx(0.02)
    assert g.nodes().shape == (201 * 201, 2)
    np.testing.assert_allclose(g.node(g.nearest_index([0.013, -0.51])), [0.02, -0.52])
    assert GridSpec.from_json(g.to_json()).to_json() == g.to_json()


@pytest.mark.parametrize("args", [([0, 0], [1], 10), ([1, 0], [0, 1], 10), ([0, 0], [1, 1], 4),
                                  ([0] * 4, [1] * 4, 10)])
def test_bad_grids(args):
    with pytest.raises(ConfigError):
        GridSpec(*args)


def test_rasterized_point_target_marks_nearest_node():
    g = small_grid()
    mask = TargetSet(singleton([0.01, 0.0])).rasterize(g)
    assert mask.sum() == 1 and mask[g.nearest_index([0.0, 0.0])]


def test_union_target_distance_and_json():
    K = TargetSet([Ball([-1, 0], 0.5), box([1, -0.5], [2, 0.5])])
    np.testing.assert_allclose(K.distance_many([[0.0, 0.0], [3.0, 0.0], [-1.0, 2.0]]),
                               [0.5, 1.0, 1.5], atol=1e-9)
    again = target_from_json(K.to_json())
    assert again.distance([0.0, 0.0]) == pytest.approx(0.5)


# solver against closed forms

def test_eikonal_error_and_runtime():
    sc_grid = GridSpec([-2, -2], [2, 2], 201)
    start = time.perf_counter()
    field = solve_min_time(Isotropic(2, 1.0), TargetSet(Ball([0, 0], 0.25)), sc_grid)
    elapsed = time.perf_counter() - start
    X = sc_grid.nodes()
    T = field.values.reshape(-1)
    exact = np.maximum(np.linalg.norm(X, axis=1) - 0.25, 0.0)
    band = T <= 1.5
    assert np.max(np.abs(T[band] - exact[band])) <= 2 * sc_grid.dx
    assert elapsed <= 30.0


def test_double_integrator_against_bang_bang(double_integrator):
    _, field = double_integrator
    assert abs(eval_T(field, [0.0, -1.0]) - (1 + np.sqrt(2))) <= 0.1
    # a ball target can only shorten the time to the origin
    rng = np.random.default_rng(3)
    X = rng.uniform(-1.2, 1.2, (300, 2))
    T = eval_T_many(field, X)
    oracle = np.array([double_integrator_time(*x) for x in X])
    keep = np.isfinite(T) & (oracle < 2.5)
    assert keep.sum() > 200
    assert np.all(T[keep] <= oracle[keep] + 0.1)


def test_fixed_step_scheme_is_consistent():
    g = small_grid(41, 1.0)
    F, K = Isotropic(2, 1.0), TargetSet(Ball([0, 0], 0.2))
    a = solve_min_time(F, K, g)
    b = solve_min_time(F, K, g, scheme="fixed")
    assert np.nanmax(np.abs(a.values - b.values)) < 0.1


def test_unreachable_region_is_infinite():
    # velocities only point up and right, so nodes up and right of the target
    # cannot reach it
    F = LinearDrift(np.zeros((2, 2)), box([0, 0], [1, 1]))
    field = solve_min_time(F, TargetSet(Ball([0, 0], 0.1)), small_grid(41, 1.0))
    assert np.isinf(eval_T(field, [0.8, 0.8]))
    assert eval_T(field, [-0.8, -0.8]) == pytest.approx(0.7, abs=0.1)
    assert field.header()["unreachable_nodes"] > 0


def test_cfl_violation_and_budget():
    g = small_grid()
    F, K = Isotropic(2, 1.0), TargetSet(Ball([0, 0], 0.2))
    with pytest.raises(CFLError):
        solve_min_time(F, K, g, tau=2 * cfl_bound(F, g))
    with pytest.raises(CFLError):
        solve_min_time(F, K, g, tau=0.0)
    with pytest.raises(SolverBudgetError) as info:
        solve_min_time(F, K, g, max_sweeps=1)
    assert info.value.sweeps == 1


def test_solver_rejects_mismatched_inputs():
    with pytest.raises(ConfigError):
        solve_min_time(Isotropic(3, 1.0), TargetSet(Ball([0, 0], 0.2)), small_grid())
    with pytest.raises(ConfigError):
        solve_min_time(Isotropic(2, 1.0), TargetSet(Ball([0, 0], 0.2)), small_grid(),
                       scheme="upwind")


def test_history_records_every_sweep():
    hist = []
    field = solve_min_time(Isotropic(2, 1.0), TargetSet(Ball([0, 0], 0.2)), small_grid(),
                           history=hist)
    assert len(hist) == field.sweeps
    np.testing.assert_array_equal(hist[-1], field.values)


# evaluation, sublevels, IO

def test_eval_on_nodes_and_outside(eikonal):
    _, field = eikonal
    g = field.grid
    idx = (150, 40)
    assert eval_T(field, g.node(idx)) == pytest.approx(field.value_at_index(idx))
    with pytest.raises(DomainError):
        eval_T(field, [2.5, 0.0])


def test_sublevel_points_and_boundary(eikonal):
    _, field = eikonal
    pts, boundary = sublevel_points(field, 0.5)
    r = np.linalg.norm(pts, axis=1)
    assert np.all(r <= 0.75 + 2 * field.dx)
    assert np.all(r[boundary] >= 0.75 - 2 * field.dx)
    with pytest.raises(ConfigError):
        sublevel_points(field, -1.0)


def test_eikonal_sublevels_are_convex(eikonal):
    _, field = eikonal
    for t in (0.3, 0.8, 1.4):
        assert check_sublevel_convexity(field, t)[0]


def test_nonconvex_sublevel_detected():
    # two separated discs give a disconnected sublevel at small t
    field = solve_min_time(Isotropic(2, 1.0),
                           TargetSet([Ball([-0.6, 0], 0.2), Ball([0.6, 0], 0.2)]), small_grid(81))
    ok, worst = check_sublevel_convexity(field, 0.1)
    assert not ok and worst > 0.2


def test_attainable_points_lie_on_sublevel_boundary(eikonal):
    sc, field = eikonal
    Y = attainable_points(sc.dynamics(), sc.target(), 0.7, trajectories=64, dt=0.01)
    np.testing.assert_allclose(np.linalg.norm(Y, axis=1), 0.95, atol=1e-9)
    np.testing.assert_allclose(eval_T_many(field, Y), 0.7, atol=2 * field.dx)
    with pytest.raises(ConfigError):
        attainable_points(sc.dynamics(), sc.target(), 0.7, trajectories=0)


def test_field_csv_round_trip(tmp_path):
    F = LinearDrift(np.zeros((2, 2)), box([0, 0], [1, 1]))
    field = solve_min_time(F, TargetSet(Ball([0, 0], 0.1)), small_grid(21))
    write_field(field, tmp_path / "f.csv", tmp_path / "f.json")
    again = read_field(tmp_path / "f.csv", tmp_path / "f.json")
    np.testing.assert_array_equal(again.values, field.values)
    assert again.header() == field.header()
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,value" and len(lines) == 21 * 21 + 1
    assert any(line.endswith(",inf") for line in lines)


def test_field_csv_size_mismatch(tmp_path):
    field = ValueField(small_grid(21), np.zeros((21, 21)), np.zeros((21, 21), bool))
    write_field(field, tmp_path / "f.csv", tmp_path / "f.json")
    (tmp_path / "f.json").write_text((tmp_path / "f.json").read_text().replace("21", "22"))
    with pytest.raises(ConfigError):
        read_field(tmp_path / "f.csv", tmp_path / "f.json")


# invariants

@FAST
@given(st.floats(0.05, 1.6))
def test_sublevels_are_nested(t):
    field = _coarse_eikonal()
    small, _ = sublevel_points(field, t)
    large, _ = sublevel_points(field, t + 0.1)
    assert len(small) <= len(large)
    assert {tuple(p) for p in small} <= {tuple(p) for p in large}


_CACHE = {}


def _coarse_eikonal():
    if "f" not in _CACHE:
        _CACHE["f"] = solve_min_time(Isotropic(2, 1.0), TargetSet(Ball([0, 0], 0.25)),
                                     small_grid(61, 2.0))
    return _CACHE["f"]


@FAST
@given(st.tuples(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9)), st.floats(0.0, 2 * np.pi))
def test_dynamic_programming_inequality(x, angle):
    # T(x) <= s + T(x + s v) for every admissible velocity v
    field = _coarse_eikonal()
    x = np.array(x)
    v = np.array([np.cos(angle), np.sin(angle)])
    s = 0.3
    y = x + s * v
    if not field.grid.contains(y):
        return
    assert eval_T(field, x) <= s + eval_T(field, y) + 2 * field.dx


@FAST
@given(st.tuples(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9)),
       st.tuples(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9)))
def test_value_is_one_lipschitz_for_unit_speed(x, y):
    field = _coarse_eikonal()
    x, y = np.array(x), np.array(y)
    assert abs(eval_T(field, x) - eval_T(field, y)) <= np.linalg.norm(x - y) + 2 * field.dx
    assert eval_T(field, x) >= 0.0
