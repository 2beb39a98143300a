import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mintime.errors import ConfigError, InsufficientSamplingError
from mintime.hjbsolve import GridSpec, ValueField
from mintime.nonsmooth import (cone_dimension, epi_normals, epi_pair_sigma, horiz_subdiff,
                               jump_excluded, phi_convexity_constant, positive_span_agrees,
                               prox_subdiff, proximal_normals, proximal_sigma, reduce_fan,
                               subgradient_defect)

FAST = settings(max_examples=30, deadline=None)
GRID = GridSpec([-1, -1], [1, 1], 81)


def field_of(fn, grid=GRID):
    X = grid.nodes()
    V = fn(X[:, 0], X[:, 1]).reshape(grid.cells)
    return ValueField(grid, V, V == 0.0)


def polar_disc(radius=0.5, h=0.0125):
    """Concentric rings, so the outer ring is an exact sampled circle."""
    rings = [np.zeros((1, 2))]
    for r in np.linspace(0, radius, int(round(radius / h)) + 1)[1:]:
        rings.append(circle(r, max(8, int(round(2 * np.pi * r / h)))))
    return np.vstack(rings)


def lattice_square(half=0.5, h=0.0125):
    ax = np.arange(-half, half + h / 2, h)
    return np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)


def circle(radius, count=720):
    t = np.linspace(0, 2 * np.pi, count, endpoint=False)
    return radius * np.stack([np.cos(t), np.sin(t)], 1)


def angle(u, v):
    u, v = np.asarray(u, float), np.asarray(v, float)
    c = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(np.clip(c, -1, 1)))


# proximal normal cones of clouds

def test_proximal_sigma_of_inward_circle_normal():
    # <-e1, y - x> = R - y1 and |y - x|^2 = 2 R (R - y1) on the circle
    R = 0.8
    C = circle(R)
    x = C[0]
    sig = proximal_sigma(np.array([[-1.0, 0.0], [1.0, 0.0]]), C[1:] - x)
    assert sig[0] == pytest.approx(1 / (2 * R), rel=1e-9)
    assert sig[1] == 0.0


def test_disc_boundary_has_one_outward_generator():
    cone = proximal_normals(polar_disc(), [0.5, 0.0], eta=0.1)
    assert cone_dimension(cone) == 1
    assert angle(cone.generators[0], [1, 0]) < 0.05


def test_square_corner_cone_is_the_quadrant():
    cone = proximal_normals(lattice_square(), [0.5, 0.5], eta=0.1)
    assert cone_dimension(cone) == 2 and positive_span_agrees(cone)
    G = cone.generators / np.linalg.norm(cone.generators, axis=1, keepdims=True)
    assert np.all(G >= -0.05)
    # the extreme rays of the quadrant are both represented
    assert min(angle(g, [1, 0]) for g in G) < 0.05
    assert min(angle(g, [0, 1]) for g in G) < 0.05


def test_interior_point_has_trivial_cone():
    cone = proximal_normals(lattice_square(), [0.0, 0.0], eta=0.1)
    assert cone.empty and cone_dimension(cone) == 0


def test_cone_errors():
    with pytest.raises(ConfigError):
        proximal_normals(lattice_square(), [0.003, 0.0], eta=0.1)
    with pytest.raises(InsufficientSamplingError):
        proximal_normals(lattice_square(), [0.5, 0.5], eta=0.015)


def test_cone_json():
    doc = proximal_normals(lattice_square(), [0.5, 0.0], eta=0.1).to_json()
    assert doc["dimension"] == 1 and len(doc["generators"]) == 1


# fan reduction and dimension

def test_reduce_fan_collapses_thin_fan():
    t = np.deg2rad(np.linspace(-2, 2, 9))
    fan = np.stack([np.cos(t), np.sin(t)], 1)
    out = reduce_fan(fan, 0.2)
    assert out.shape == (1, 2)
    np.testing.assert_allclose(out[0], [1, 0], atol=1e-12)


def test_reduce_fan_keeps_opposite_rays_and_full_fans():
    t = np.deg2rad(np.linspace(-2, 2, 9))
    line = np.vstack([np.stack([np.cos(t), np.sin(t)], 1), -np.stack([np.cos(t), np.sin(t)], 1)])
    out = reduce_fan(line, 0.2)
    assert len(out) == 2 and out[0] @ out[1] == pytest.approx(-1.0)
    wide = np.eye(2)
    np.testing.assert_array_equal(reduce_fan(wide, 0.2), wide)


def test_pointedness_check():
    from mintime.nonsmooth import ProximalCone
    line = ProximalCone(np.zeros(2), np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2), 0.1)
    assert cone_dimension(line) == 1 and not positive_span_agrees(line)


def test_phi_convexity_of_convex_and_nonconvex_clouds():
    R = 0.5
    C = circle(R, 360)
    D = polar_disc(R, 2 * np.pi * R / 360)
    outward = [proximal_normals(D, c, eta=0.1) for c in C[::40]]
    assert phi_convexity_constant(D, outward) <= 1e-9
    # normals pointing into the disc see the circle bend towards them
    from mintime.nonsmooth import ProximalCone
    inward = [ProximalCone(c, -c[None, :] / R, np.zeros(1), 0.2) for c in C[::40]]
    assert phi_convexity_constant(C, inward) == pytest.approx(1 / (2 * R), rel=1e-6)


# subgradients against closed forms

def test_defect_of_concave_quadratic_is_one_half():
    field = field_of(lambda a, b: -(a * a + b * b) / 2)
    x = np.array([0.25, -0.25])
    assert subgradient_defect(field, x, [-x])[0] == pytest.approx(0.5, rel=1e-9)


def test_defect_of_convex_quadratic():
    field = field_of(lambda a, b: (a * a + b * b) / 2)
    x = np.array([0.25, -0.25])
    assert subgradient_defect(field, x, [x])[0] == pytest.approx(0.0, abs=1e-12)
    assert subgradient_defect(field, x, [x + [0.5, 0.0]])[0] > 1.0


def test_subdifferential_of_convex_kink():
    # f = |x1| + x2 / 2 has subdifferential [-1, 1] x {1/2} at the kink
    field = field_of(lambda a, b: np.abs(a) + 0.5 * b)
    Z = prox_subdiff(field, [0.0, 0.0])
    assert len(Z) > 10
    assert np.all(np.abs(Z[:, 0]) <= 1.05) and np.all(np.abs(Z[:, 1] - 0.5) <= 0.1)
    assert Z[:, 0].max() > 0.9 and Z[:, 0].min() < -0.9
    epi = epi_normals(field, [0.0, 0.0])
    assert cone_dimension(epi.as_cone()) == 2
    assert len(horiz_subdiff(field, [0.0, 0.0], epi=epi)) == 0


def test_concave_kink_has_no_subgradients():
    field = field_of(lambda a, b: 1.0 - np.abs(a))
    Z = prox_subdiff(field, [0.0, 0.0])
    assert len(Z) == 0


def test_smooth_point_subgradients_cluster_at_gradient():
    field = field_of(lambda a, b: np.hypot(a - 2, b))
    x = np.array([0.0, 0.5])
    grad = (x - [2, 0]) / np.linalg.norm(x - [2, 0])
    Z = prox_subdiff(field, x)
    assert len(Z) > 0
    assert np.max(np.linalg.norm(Z - grad, axis=1)) < 0.15


def test_square_root_cusp_has_horizontal_subgradients():
    field = field_of(lambda a, b: np.sqrt(np.abs(a)) + 0.0 * b)
    H = horiz_subdiff(field, [0.0, 0.0])
    assert len(H) == 2
    assert sorted(np.round(H[:, 0]).tolist()) == [-1.0, 1.0]


def test_jump_exclusion():
    V = np.ones((9, 9))
    V[4, 5] = np.inf
    field = ValueField(GridSpec([0, 0], [1, 1], 9), V, np.zeros((9, 9), bool))
    assert jump_excluded(field, (4, 4)) and not jump_excluded(field, (1, 1))
    V2 = np.ones((9, 9))
    V2[2, 2] = 20.0
    field2 = ValueField(GridSpec([0, 0], [1, 1], 9), V2, np.zeros((9, 9), bool))
    assert jump_excluded(field2, (2, 3))


# invariants

DISC = polar_disc()


@FAST
@given(st.floats(0, 2 * np.pi))
def test_disc_normal_follows_the_boundary(theta):
    C = circle(0.5, 251)
    k = int(round(theta / (2 * np.pi) * 251)) % 251
    cone = proximal_normals(DISC, C[k], eta=0.1)
    assert cone_dimension(cone) == 1
    assert angle(cone.generators[0], C[k]) < 0.05


@FAST
@given(st.floats(0.01, 100.0), st.floats(0, 2 * np.pi))
def test_proximal_sigma_is_positively_homogeneous(scale, theta):
    off = lattice_square(0.2, 0.05)
    off = off[np.linalg.norm(off, axis=1) > 0]
    u = np.array([[np.cos(theta), np.sin(theta)]])
    assert proximal_sigma(scale * u, off)[0] == pytest.approx(scale * proximal_sigma(u, off)[0])


@FAST
@given(st.integers(-20, 20), st.integers(-20, 20))
def test_epigraph_pairs_give_subgradients(i, j):
    # dividing the epigraph inequality of a unit pair (zeta, alpha), alpha < 0,
    # by |alpha| gives defect(zeta / |alpha|) <= sigma (1 + L^2) / |alpha|
    # with L the largest difference quotient in the window
    field = field_of(lambda a, b: np.abs(a) + np.hypot(a, b - 2))
    x = GRID.node((40 + i, 40 + j))
    eta = 4 * field.dx
    Y = GRID.nodes()
    near = (np.linalg.norm(Y - x, axis=1) <= eta * (1 + 1e-12)) & (np.linalg.norm(Y - x, axis=1) > 0)
    tx = field.values[40 + i, 40 + j]
    L = np.max(np.abs(field.values.reshape(-1)[near] - tx) / np.linalg.norm(Y[near] - x, axis=1))
    epi = epi_normals(field, x)
    neg = epi.pairs[:, -1] < -1e-9
    assert np.any(neg)
    for pair, sig in zip(epi.pairs[neg], epi.sigma[neg]):
        zeta = pair[:-1] / -pair[-1]
        bound = sig * (1 + L * L) / -pair[-1]
        assert subgradient_defect(field, x, [zeta])[0] <= bound * (1 + 1e-9) + 1e-12
        assert epi_pair_sigma(field, x, pair)[0] == pytest.approx(sig, rel=1e-9, abs=1e-12)
