"""Sampled proximal normal cones, epigraph normals and subdifferentials.

A unit direction ``u`` is a proximal normal of a point cloud ``S`` at ``x``
when ``<u, y - x> <= sigma |y - x|^2`` for every cloud point ``y`` near ``x``.
On finite clouds every direction passes for a large enough ``sigma``, so the
test is run against a cap ``sigma_max`` tied to the grid spacing.  Directions
that pass form a lattice fan slightly wider than the true cone; the fan is
reduced to generators by snapping it onto its significant principal subspace
(singular values below an angular resolution are treated as lattice
thickness).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import linprog

from .directions import default_direction_count, direction_grid, grid_resolution
from .errors import ConfigError, InsufficientSamplingError
from .hjbsolve import ValueField, eval_T, local_lipschitz

SIGMA_FACTOR = 0.25
CORE_FRACTION = 0.1
SUBGRAD_FACTOR = 0.02
MIN_CLOUD_POINTS = 8
PHI_TOP_DEG = 10.0
PHI_STEP_DEG = 1.0


@dataclass(eq=False)
class ProximalCone:
    point: np.ndarray
    generators: np.ndarray
    sigma: np.ndarray
    eta: float
    accepted: np.ndarray = dc_field(default=None)
    resolution: float = 0.0

    @property
    def empty(self):
        return len(self.generators) == 0

    def dimension(self):
        return cone_dimension(self)

    def to_json(self):
        return {
            "point": [float(v) for v in self.point],
            "generators": [{"dir": [float(v) for v in g], "sigma": float(s)}
                           for g, s in zip(self.generators, self.sigma)],
            "dimension": int(cone_dimension(self)),
        }


@dataclass(eq=False)
class EpiNormalSample:
    """Generators ``(zeta, alpha)`` of the epigraph normal cone at
    ``(x, T(x))``; ``accepted`` holds every lattice pair that passed."""

    point: np.ndarray
    value: float
    pairs: np.ndarray
    sigma: np.ndarray
    eta: float
    accepted: np.ndarray = dc_field(default=None)
    accepted_sigma: np.ndarray = dc_field(default=None)
    resolution: float = 0.0
    sigma_max: float = None
    r_min: float = 0.0

    @property
    def empty(self):
        return len(self.pairs) == 0

    def as_cone(self):
        base = np.concatenate([self.point, [self.value]])
        return ProximalCone(base, self.pairs, self.sigma, self.eta, self.accepted, self.resolution)

    def to_json(self):
        return {
            "point": [float(v) for v in self.point],
            "value": float(self.value),
            "generators": [{"dir": [float(v) for v in g], "sigma": float(s)}
                           for g, s in zip(self.pairs, self.sigma)],
            "dimension": int(cone_dimension(self.as_cone())),
        }


# --------------------------------------------------------------------------
# helpers


def _unit_rows(U):
    U = np.asarray(U, float)
    if not len(U):
        return U.reshape(0, U.shape[-1] if U.ndim == 2 else 0)
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def proximal_sigma(directions, offsets):
    """``max_y <u, y-x> / |y-x|^2`` per direction, clamped at zero."""
    offsets = np.asarray(offsets, float)
    d2 = np.sum(offsets**2, axis=1)
    ratios = (np.asarray(directions, float) @ offsets.T) / d2[None, :]
    return np.maximum(ratios.max(axis=1), 0.0)


def reduce_fan(U, resolution, weights=None):
    """Collapse an accepted direction fan onto its principal subspace.

    Singular values of the (optionally row-weighted) direction matrix smaller
    than ``resolution`` times the largest are dropped, the directions are
    projected on the remaining span and renormalized, and duplicates are
    removed.  A full-rank fan is returned unchanged.  ``weights`` compensate
    for lattices that are not uniform on the sphere.
    """
    U = np.asarray(U, float)
    if len(U) == 0:
        return U
    d = U.shape[1]
    W = U if weights is None else U * np.sqrt(np.asarray(weights, float))[:, None]
    _, s, Vt = np.linalg.svd(W, full_matrices=False)
    rank = int(np.sum(s >= resolution * s[0]))
    if rank >= d:
        return U.copy()
    V = Vt[:rank]
    P = (U @ V.T) @ V
    norms = np.linalg.norm(P, axis=1)
    keep = norms > 0.5
    P = P[keep] / norms[keep, None]
    if rank == 1:
        v = V[0] if np.sum(U @ V[0]) >= 0 else -V[0]
        signs = np.sign(P @ v)
        out = [v] if np.any(signs > 0) else []
        if np.any(signs < 0):
            out.append(-v)
        return np.array(out)
    _, first = np.unique(np.round(P, 9), axis=0, return_index=True)
    return P[np.sort(first)]


def fan_resolution(sigma_max, r_min, lattice_angle):
    """Angular thickness of an accepted fan around a lower-dimensional cone:
    the proximal test admits directions within ``asin(sigma_max r_min)`` of
    the cone and the lattice adds its own spacing."""
    return 2.0 * (np.arcsin(min(1.0, sigma_max * r_min)) + lattice_angle)


def default_sigma_max(dx, factor=SIGMA_FACTOR):
    return factor / dx


def _core(sig, ok, sigma_max, core_fraction):
    """Accepted directions within ``core_fraction * sigma_max`` of the best
    one; these carry the generators, the full accepted fan being wider by
    the curvature allowance."""
    if not np.any(ok):
        return ok, 0.0
    band = core_fraction * sigma_max
    return ok & (sig <= sig[ok].min() + band), band


# --------------------------------------------------------------------------
# cones of point clouds


def proximal_normals(cloud, x, eta, directions=None, sigma_max=None, resolution=None,
                     core_fraction=CORE_FRACTION):
    """Proximal normal cone of a point cloud at one of its points.

    Args:
        cloud: array ``(m, n)`` containing ``x``.
        eta: search radius; only cloud points within ``eta`` of ``x`` count.
        directions: lattice size (defaults to 360 in the plane, 2562 in space).
        sigma_max: curvature cap; defaults to ``SIGMA_FACTOR / r`` with ``r``
            the distance from ``x`` to its nearest cloud neighbor.
        core_fraction: generators come from accepted directions whose
            ``sigma`` is within ``core_fraction * sigma_max`` of the smallest.

    Raises:
        InsufficientSamplingError: fewer than 8 cloud points near ``x``.
    """
    cloud = np.atleast_2d(np.asarray(cloud, float))
    x = np.asarray(x, float).reshape(-1)
    n = x.size
    offsets = cloud - x
    dist = np.linalg.norm(offsets, axis=1)
    if not np.any(dist <= 1e-9 * max(1.0, np.abs(x).max())):
        raise ConfigError("base point must belong to the cloud")
    near = (dist <= eta) & (dist > 1e-12)
    if np.count_nonzero(near) + 1 < MIN_CLOUD_POINTS:
        raise InsufficientSamplingError(
            f"only {np.count_nonzero(near) + 1} cloud points within {eta:g} of {x.tolist()}")
    offsets = offsets[near]
    r_min = float(dist[near].min())
    if sigma_max is None:
        sigma_max = default_sigma_max(r_min)
    count = directions or default_direction_count(n)
    D = direction_grid(n, count)
    sig = proximal_sigma(D, offsets)
    ok = sig <= sigma_max
    accepted = D[ok]
    core, band = _core(sig, ok, sigma_max, core_fraction)
    if resolution is None:
        resolution = fan_resolution(band, r_min, grid_resolution(n, count))
    gens = reduce_fan(D[core], resolution)
    gsig = proximal_sigma(gens, offsets) if len(gens) else np.zeros(0)
    return ProximalCone(x, gens, gsig, float(eta), accepted, float(resolution))


def cone_dimension(cone: ProximalCone) -> int:
    """Rank of the generator matrix (singular values above 1e-6 of the
    largest)."""
    G = np.asarray(cone.generators, float)
    if len(G) == 0:
        return 0
    s = np.linalg.svd(G, compute_uv=False)
    return int(np.sum(s > 1e-6 * s[0]))


def positive_span_agrees(cone: ProximalCone) -> bool:
    """True when the generators span a pointed cone, where the positive
    spanning dimension equals the linear rank."""
    G = np.asarray(cone.generators, float)
    if len(G) <= 1:
        return True
    n = G.shape[1]
    # maximize t subject to <w, g_i> >= t, |w|_inf <= 1
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A = np.hstack([-G, np.ones((len(G), 1))])
    res = linprog(c, A_ub=A, b_ub=np.zeros(len(G)),
                  bounds=[(-1, 1)] * n + [(None, 1)], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-9)


def phi_convexity_constant(cloud, cones, min_separation: float = 0.0) -> float:
    """Smallest ``phi`` with ``<v, y-x> <= phi |v| |y-x|^2`` for every cone
    base ``x``, generator ``v`` and cloud point ``y`` farther than
    ``min_separation`` from ``x``."""
    cloud = np.atleast_2d(np.asarray(cloud, float))
    best = 0.0
    for cone in cones:
        if cone.empty:
            continue
        off = cloud - cone.point
        d2 = np.sum(off**2, axis=1)
        keep = d2 > max(min_separation, 1e-12) ** 2
        if not np.any(keep):
            continue
        G = _unit_rows(cone.generators)
        ratio = (G @ off[keep].T) / d2[keep][None, :]
        best = max(best, float(ratio.max()))
    return max(best, 0.0)


# --------------------------------------------------------------------------
# epigraph and subdifferentials


def _window(field: ValueField, x, eta):
    """Finite grid nodes within ``eta`` of ``x`` (excluding ``x``) and their
    values."""
    grid = field.grid
    x = np.asarray(x, float)
    lo = np.floor((x - eta - np.asarray(grid.lower)) / grid.spacing).astype(int)
    hi = np.ceil((x + eta - np.asarray(grid.lower)) / grid.spacing).astype(int)
    lo = np.clip(lo, 0, np.asarray(grid.cells) - 1)
    hi = np.clip(hi, 0, np.asarray(grid.cells) - 1)
    ranges = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    idx = np.array(list(itertools.product(*ranges)), dtype=int)
    Y = np.asarray(grid.lower) + idx * grid.spacing
    vals = field.values[tuple(idx.T)]
    d = np.linalg.norm(Y - x, axis=1)
    keep = (d <= eta * (1 + 1e-12)) & (d > 1e-12) & np.isfinite(vals)
    return Y[keep], vals[keep]


def _field_value(field, x):
    idx = field.grid.nearest_index(x)
    if np.allclose(field.grid.node(idx), x, atol=1e-12):
        return field.value_at_index(idx)
    return eval_T(field, x)


def epi_pair_lattice(n, directions=None, phi_step_deg=PHI_STEP_DEG, phi_top_deg=PHI_TOP_DEG):
    """Unit pairs ``(cos(phi) u, sin(phi))`` over a direction lattice ``u``
    and inclinations ``phi`` from just above the horizontal down to the
    vertical, plus the pure downward pair."""
    count = directions or default_direction_count(n)
    D = direction_grid(n, count)
    phis = np.deg2rad(np.arange(phi_top_deg, -90.0, -phi_step_deg))
    pairs = [np.hstack([np.cos(p) * D, np.full((len(D), 1), np.sin(p))]) for p in phis]
    down = np.zeros((1, n + 1))
    down[0, -1] = -1.0
    lattice = np.vstack(pairs + [down])
    angle = max(grid_resolution(n, count), np.deg2rad(phi_step_deg) / 2.0)
    return lattice, angle


def epi_lattice_weights(pairs, directions=None):
    """Area weights ``cos(phi)**(n-1)`` of latitude-longitude lattice pairs;
    the single downward pair stands for the polar cap of half a latitude
    step."""
    n = pairs.shape[1] - 1
    count = directions or default_direction_count(n)
    cos = np.sqrt(np.maximum(1.0 - pairs[:, -1] ** 2, 0.0))
    step = np.deg2rad(PHI_STEP_DEG)
    # cap area over the area of one lattice cell at unit weight
    if n == 2:
        cap = count * step / 8.0
    else:
        cap = step ** (n - 1)
    return np.where(cos > 1e-12, cos ** (n - 1), cap)


def epi_samples(field: ValueField, x, eta, dbeta=None):
    """Epigraph points ``(y, beta) - (x, T(x))`` with ``y`` near ``x`` and
    ``beta`` from ``T(y)`` up to ``T(y) + eta`` in steps of ``dbeta``."""
    x = np.asarray(x, float)
    tx = _field_value(field, x)
    if not np.isfinite(tx):
        raise ConfigError("epigraph normals need a finite value at the base point")
    dbeta = dbeta or field.dx
    Y, vals = _window(field, x, eta)
    ks = np.arange(0, int(np.floor(eta / dbeta + 1e-9)) + 1) * dbeta
    off = [np.hstack([Y - x, (vals - tx + k)[:, None]]) for k in ks]
    up = np.zeros((len(ks) - 1, x.size + 1))
    up[:, -1] = ks[1:]
    Z = np.vstack(off + [up])
    return Z, tx, len(Y)


def epi_normals(field: ValueField, x, eta=None, directions=None, sigma_max=None,
                resolution=None, core_fraction=CORE_FRACTION) -> EpiNormalSample:
    """Proximal normals of the epigraph of ``T`` at ``(x, T(x))``.

    The candidate pairs form a latitude-longitude lattice (see
    :func:`epi_pair_lattice`), which contains the horizontal pairs
    ``(u, 0)`` exactly.
    """
    x = np.asarray(x, float)
    n = x.size
    eta = eta or 4.0 * field.dx
    Z, tx, count = epi_samples(field, x, eta)
    if count + 1 < MIN_CLOUD_POINTS:
        raise InsufficientSamplingError(f"only {count + 1} grid nodes within {eta:g} of {x.tolist()}")
    sigma_max = sigma_max or default_sigma_max(field.dx)
    lattice, angle = epi_pair_lattice(n, directions)
    sig = proximal_sigma(lattice, Z)
    ok = sig <= sigma_max
    accepted = lattice[ok]
    core, band = _core(sig, ok, sigma_max, core_fraction)
    r_min = float(np.linalg.norm(Z, axis=1).min())
    if resolution is None:
        resolution = fan_resolution(band, r_min, angle)
    gens = reduce_fan(lattice[core], resolution,
                      weights=epi_lattice_weights(lattice[core], directions))
    gsig = proximal_sigma(gens, Z) if len(gens) else np.zeros(0)
    return EpiNormalSample(x, tx, gens, gsig, float(eta), accepted, sig[ok], float(resolution),
                           float(sigma_max), r_min)


def epi_pair_sigma(field: ValueField, x, pair, eta=None):
    """Smallest ``sigma`` for which a given (normalized) pair passes the
    epigraph proximal test."""
    eta = eta or 4.0 * field.dx
    Z, _, _ = epi_samples(field, x, eta)
    pair = _unit_rows(np.atleast_2d(pair))
    return proximal_sigma(pair, Z)


def subgradient_defect(field: ValueField, x, zetas, eta=None):
    """Smallest ``c >= 0`` with ``T(y) - T(x) - <zeta, y-x> >= -c |y-x|^2``
    on finite grid nodes near ``x``, for each row of ``zetas``."""
    x = np.asarray(x, float)
    eta = eta or 4.0 * field.dx
    tx = _field_value(field, x)
    Y, vals = _window(field, x, eta)
    off = Y - x
    d2 = np.sum(off**2, axis=1)
    Zs = np.atleast_2d(np.asarray(zetas, float))
    gap = (vals - tx)[None, :] - Zs @ off.T
    return np.maximum((-gap / d2[None, :]).max(axis=1), 0.0)


def subgradient_candidates(field: ValueField, x, epi: EpiNormalSample | None = None,
                           directions=144, magnitudes=81, extra=None):
    """Direction x magnitude lattice, rescaled epigraph pairs with negative
    last component, and any caller-supplied candidates."""
    n = np.asarray(x).size
    lip = float(local_lipschitz(field, np.atleast_2d(x))[0])
    top = 2.0 * max(lip, 1.0)
    D = direction_grid(n, directions) if n > 1 else np.array([[1.0], [-1.0]])
    mags = np.linspace(0.0, top, magnitudes)[1:]
    cands = [np.zeros((1, n)), (mags[:, None, None] * D[None, :, :]).reshape(-1, n)]
    if epi is not None and epi.accepted is not None and len(epi.accepted):
        A = epi.accepted
        neg = A[:, -1] < -1e-12
        cands.append(A[neg, :-1] / -A[neg, -1:])
    if extra is not None and len(extra):
        cands.append(np.atleast_2d(np.asarray(extra, float)))
    return np.vstack(cands)


def prox_subdiff(field: ValueField, x, eta=None, c_max=None, epi=None, extra=None):
    """Sampled proximal subgradients of ``T`` at ``x``.

    A candidate ``zeta`` is kept when ``T(y) - T(x) - <zeta, y-x> >=
    -c_max |y-x|^2`` for all finite grid nodes ``y`` within ``eta``.
    """
    x = np.asarray(x, float)
    eta = eta or 4.0 * field.dx
    c_max = c_max if c_max is not None else SUBGRAD_FACTOR / field.dx
    if epi is None:
        epi = epi_normals(field, x, eta)
    cands = subgradient_candidates(field, x, epi, extra=extra)
    defect = subgradient_defect(field, x, cands, eta)
    return cands[defect <= c_max]


def horizontal_directions(epi: EpiNormalSample, core_fraction=CORE_FRACTION):
    """``(generators, accepted)`` of the zero-``alpha`` slice of an epigraph
    sample, as unit n-vectors."""
    n = epi.point.size
    A = epi.accepted
    if A is None or not len(A):
        return np.zeros((0, n)), np.zeros((0, n))
    flat = np.abs(A[:, -1]) <= 1e-12
    if not np.any(flat):
        return np.zeros((0, n)), np.zeros((0, n))
    U = _unit_rows(A[flat, :-1])
    sig = epi.accepted_sigma[flat]
    sigma_max = float(epi.accepted_sigma.max()) if epi.sigma_max is None else epi.sigma_max
    core = sig <= sig.min() + core_fraction * sigma_max
    res = fan_resolution(core_fraction * sigma_max, epi.r_min,
                         grid_resolution(n, default_direction_count(n)))
    return reduce_fan(U[core], res), U


def horiz_subdiff(field: ValueField, x, eta=None, sigma_max=None, epi=None):
    """Unit horizontal subgradients: generators of the accepted epigraph
    pairs with zero last component."""
    if epi is None:
        epi = epi_normals(field, np.asarray(x, float), eta, sigma_max=sigma_max)
    return horizontal_directions(epi)[0]


def jump_excluded(field: ValueField, index, ratio: float = 10.0) -> bool:
    """True when a node has an infinite neighbor or a positive neighbor whose
    value differs from its own by more than ``ratio`` times."""
    V = field.values
    index = np.asarray(index)
    v0 = V[tuple(index)]
    if not np.isfinite(v0):
        return True
    for delta in itertools.product((-1, 0, 1), repeat=V.ndim):
        if not any(delta):
            continue
        j = index + np.asarray(delta)
        if np.any(j < 0) or np.any(j >= np.asarray(V.shape)):
            continue
        v = V[tuple(j)]
        if not np.isfinite(v):
            return True
        if v > 0 and v0 > 0 and max(v, v0) > ratio * min(v, v0):
            return True
    return False


def epi_phi_convexity(field: ValueField, region, samples: int = 40, seed: int = 0,
                      t_range=None, eta=None, sigma_max=None, min_separation=0.0,
                      return_details=False):
    """Sampled constant ``C`` of the epigraph inequality

        <zeta, y-x> + alpha (T(y) - T(x)) <= C (|zeta| + |alpha|) (|y-x|^2 + |T(y)-T(x)|^2)

    over base nodes ``x`` drawn from ``region`` (and ``t_range`` when given),
    their accepted epigraph generators ``(zeta, alpha)``, and all region nodes
    ``y`` farther than ``min_separation``.
    """
    grid = field.grid
    lo, hi = (np.asarray(b, float) for b in region)
    X = grid.nodes()
    V = field.values.reshape(-1)
    inside = np.all((X >= lo) & (X <= hi), axis=1) & np.isfinite(V)
    if t_range is not None:
        inside &= (V >= t_range[0]) & (V <= t_range[1])
    # physical draws snapped to nodes, so refined grids test the same points
    rng = np.random.default_rng(seed)
    shape = np.asarray(grid.cells)
    base, seen = [], set()
    for _ in range(200 * samples):
        if len(base) >= samples:
            break
        idx = np.array(grid.nearest_index(rng.uniform(lo, hi)))
        flat = int(np.ravel_multi_index(tuple(idx), shape))
        if flat in seen:
            continue
        seen.add(flat)
        if not inside[flat] or jump_excluded(field, idx):
            continue
        base.append(flat)
    Yall, Vall = X[inside], V[inside]
    best = 0.0
    details = []
    for flat in base:
        x, tx = X[flat], V[flat]
        epi = epi_normals(field, x, eta, sigma_max=sigma_max)
        if epi.empty:
            continue
        off = Yall - x
        dt = Vall - tx
        d2 = np.sum(off**2, axis=1)
        keep = d2 > max(min_separation, 1e-12) ** 2
        P = epi.pairs
        num = P[:, :-1] @ off[keep].T + P[:, -1:] * dt[keep][None, :]
        weight = np.linalg.norm(P[:, :-1], axis=1) + np.abs(P[:, -1])
        den = weight[:, None] * (d2[keep] + dt[keep] ** 2)[None, :]
        local = float(np.max(num / den)) if num.size else 0.0
        details.append((x.tolist(), local))
        best = max(best, local)
    best = max(best, 0.0)
    if return_details:
        return best, details
    return best
