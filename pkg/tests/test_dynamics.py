import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mintime.convexset import Ball, box
from mintime.dynamics import (AffineControl, Isotropic, LinearDrift, certify_class_L,
                              certify_growth, certify_H_semiconvexity, certify_lipschitz,
                              certify_support_lipschitz, grad_x_H, max_hamiltonian,
                              min_hamiltonian, multifunction_from_json)
from mintime.errors import ConfigError, DegenerateCostateError
from mintime.expr import Expr, VectorExpr

ROT = [[0.0, -1.0], [1.0, 0.0]]
coord = st.floats(-2, 2, allow_nan=False)
vec2 = st.tuples(coord, coord).map(np.array)
nonzero2 = vec2.filter(lambda v: np.linalg.norm(v) > 1e-3)
FAST = settings(max_examples=60, deadline=None)


def double_integrator():
    return AffineControl(["x2", "0"], [["0"], ["1"]], box([-1], [1]), dim=2)


def quadratic_radius():
    return Isotropic(2, "1 + min(x1*x1 + x2*x2, 1)")


def all_dynamics():
    return [Isotropic(2, 1.0), quadratic_radius(), LinearDrift(ROT, Ball([0, 0], 1.0)),
            LinearDrift([[0.5, 0.0], [0.2, -0.3]], box([-1, -1], [1, 1])), double_integrator()]


# expressions

def test_expression_evaluates_on_point_stacks():
    e = Expr("1 + min(x1*x1 + x2*x2, 1)", 2)
    X = np.array([[0.0, 0.0], [0.5, 0.5], [2.0, 0.0]])
    np.testing.assert_allclose(e(X), [1.0, 1.5, 2.0])
    v = VectorExpr(["x2", "-x1 + 2 ** 2", "abs(x1) / 2"], 2)
    np.testing.assert_allclose(v(np.array([[-2.0, 3.0]])), [[3.0, 6.0, 1.0]])


@pytest.mark.parametrize("src", ["__import__('os')", "x4", "sin(x1)", "x1 +", "x1.real", "[1]"])
def test_expression_rejects_unsupported_syntax(src):
    with pytest.raises(ConfigError):
        Expr(src, 3)


# Hamiltonians against closed forms

def test_isotropic_hamiltonian():
    F = quadratic_radius()
    ev = max_hamiltonian(F, [0.5, 0.0], [3.0, 4.0])
    assert ev.value == pytest.approx(1.25 * 5.0)
    np.testing.assert_allclose(ev.extremal_point, [0.75, 1.0])


def test_linear_drift_hamiltonian():
    F = LinearDrift(ROT, Ball([0, 0], 1.0))
    x, p = np.array([1.0, 2.0]), np.array([0.6, 0.8])
    assert max_hamiltonian(F, x, p).value == pytest.approx((np.array(ROT) @ x) @ p + 1.0)


def test_double_integrator_hamiltonians():
    F = double_integrator()
    x, p = np.array([0.3, -0.7]), np.array([0.5, -2.0])
    assert max_hamiltonian(F, x, p).value == pytest.approx(x[1] * p[0] + abs(p[1]))
    assert min_hamiltonian(F, x, p).value == pytest.approx(x[1] * p[0] - abs(p[1]))
    np.testing.assert_allclose(grad_x_H(F, x, p), [0.0, p[0]], atol=1e-8)


def test_grad_x_H_rejects_zero_costate():
    with pytest.raises(DegenerateCostateError):
        grad_x_H(Isotropic(2, 1.0), [0.0, 0.0], [0.0, 0.0])


# certificates

def test_lipschitz_certificate_of_rotation_drift():
    # Hausdorff(F(x), F(y)) = |A (x - y)| = |x - y|
    L = certify_lipschitz(LinearDrift(ROT, Ball([0, 0], 1.0)), ([-1, -1], [1, 1]), pairs=50)
    assert 0.999 <= L <= 1.0 + 1e-9


def test_growth_certificate_of_unit_ball():
    assert certify_growth(Isotropic(2, 1.0), ([-1, -1], [1, 1])) == pytest.approx(1.0)


def test_class_L_constant_of_linear_drift_vanishes():
    C = certify_class_L(LinearDrift(ROT, Ball([0, 0], 1.0)), ([-1, -1], [1, 1]), pairs=40)
    assert C <= 1e-9


def test_class_L_constant_of_quadratic_radius():
    # on |x| <= 1 the radius is 1 + |x|^2, whose midpoint defect is exactly
    # lam (1 - lam) |x - y|^2, so the constant is 1
    C = certify_class_L(quadratic_radius(), ([-0.7, -0.7], [0.7, 0.7]), pairs=60)
    assert 0.9 <= C <= 1.0 + 1e-9


def test_semiconvexity_constants():
    p = np.array([0.6, 0.8])
    box_ = ([-0.7, -0.7], [0.7, 0.7])
    assert certify_H_semiconvexity(quadratic_radius(), p, box_) == pytest.approx(0.0, abs=1e-9)
    assert certify_H_semiconvexity(double_integrator(), p, box_) == pytest.approx(0.0, abs=1e-9)
    # H(x, p) = -|x|^2 |p| has second differences -2 |h|^2 |p|
    concave = Isotropic(2, "2 - x1*x1 - x2*x2")
    assert certify_H_semiconvexity(concave, p, box_) == pytest.approx(2.0, rel=1e-6)


def test_support_lipschitz_at_least_hausdorff_lipschitz():
    F = LinearDrift([[0.5, 0.0], [0.2, -0.3]], box([-1, -1], [1, 1]))
    b = ([-1, -1], [1, 1])
    assert certify_support_lipschitz(F, b, pairs=40) >= certify_lipschitz(F, b, pairs=40) - 1e-9


def test_certificates_validate_inputs():
    F = Isotropic(2, 1.0)
    with pytest.raises(ConfigError):
        certify_lipschitz(F, ([0, 0], [1, 1]), pairs=0)
    with pytest.raises(ConfigError):
        certify_growth(F, ([1, 0], [0, 1]))
    with pytest.raises(ConfigError):
        certify_H_semiconvexity(F, [2.0, 0.0], ([0, 0], [1, 1]))


# JSON

def test_dynamics_from_json():
    F = multifunction_from_json({"form": "linear_drift", "A": ROT,
                                 "U": {"type": "ball", "center": [0, 0], "radius": 1},
                                 "L": 1.0}, 2)
    assert isinstance(F, LinearDrift) and F.constants()["L"] == 1.0
    G = multifunction_from_json({"form": "isotropic", "radius_expr": "2"}, 2)
    assert max_hamiltonian(G, [0, 0], [1, 0]).value == pytest.approx(2.0)


@pytest.mark.parametrize("doc", [{"form": "warp"}, {"form": "isotropic"},
                                 {"form": "linear_drift", "A": [[1]], "U": {"type": "ball",
                                                                            "center": [0, 0],
                                                                            "radius": 1}}])
def test_bad_dynamics_json(doc):
    with pytest.raises(ConfigError):
        multifunction_from_json(doc, 2)


# invariants

@FAST
@given(st.sampled_from(range(5)), vec2, nonzero2, nonzero2)
def test_hamiltonian_is_sublinear_in_p(k, x, p, q):
    F = all_dynamics()[k]
    H = lambda z: max_hamiltonian(F, x, z).value  # noqa: E731
    assert H(p + q) <= H(p) + H(q) + 1e-9 * (1 + abs(H(p)) + abs(H(q)))
    assert H(2.5 * p) == pytest.approx(2.5 * H(p), rel=1e-9, abs=1e-9)


@FAST
@given(st.sampled_from(range(5)), vec2, nonzero2)
def test_min_below_max_and_extremal_velocity_attains(k, x, p):
    F = all_dynamics()[k]
    hi, lo = max_hamiltonian(F, x, p), min_hamiltonian(F, x, p)
    assert lo.value <= hi.value + 1e-12
    assert hi.extremal_point @ p == pytest.approx(hi.value, rel=1e-9, abs=1e-9)
    V = F.velocity_samples(x[None, :], 64)[0]
    assert np.max(V @ p) <= hi.value + 1e-9 * (1 + abs(hi.value))
    assert np.min(V @ p) >= lo.value - 1e-9 * (1 + abs(lo.value))
