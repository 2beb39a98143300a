"""Sampled verification of the normal-cone and subdifferential relations of
the minimum time function.

Every check reduces to a list of per-point violations compared against one
tolerance, collected in a :class:`VerificationReport`.  Set equalities are
tested as two sampled inclusions over the same direction lattice.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from . import SCHEMA_VERSION
from .directions import default_direction_count, direction_grid
from .dynamics import Multifunction, min_hamiltonian_many
from .hamflow import hamiltonian_constancy
from .errors import ConfigError, InsufficientSamplingError
from .hjbsolve import ValueField, check_sublevel_convexity, eval_T_many
from .nonsmooth import (SIGMA_FACTOR, SUBGRAD_FACTOR, ProximalCone, _field_value, cone_dimension,
                        epi_normals, epi_phi_convexity, epi_samples, horizontal_directions,
                        jump_excluded, phi_convexity_constant, positive_span_agrees,
                        proximal_normals, proximal_sigma, reduce_fan, subgradient_candidates,
                        subgradient_defect)


@dataclass(frozen=True)
class Tolerances:
    """Verification tolerances.

    ``sigma_factor`` and ``subgrad_factor`` are divided by the grid spacing to
    give the curvature caps of the normal-cone and subgradient tests.  When
    ``tol_h`` is left unset it is 0.05 on a spacing of 0.02 and scales with
    the spacing.
    """

    tol_h: float | None = None
    sigma_factor: float = SIGMA_FACTOR
    subgrad_factor: float = SUBGRAD_FACTOR
    member: float = 0.25
    angle: float = 0.1
    eta_cells: float = 4.0

    def h_tol(self, dx):
        return 0.05 * (dx / 0.02) if self.tol_h is None else self.tol_h

    def to_json(self):
        return asdict(self)


@dataclass
class VerificationReport:
    theorem: str
    scenario: str
    samples: int
    passed: bool
    worst: float
    tolerance: float
    excluded: int = 0
    records: list = dc_field(default_factory=list)
    notes: str = ""

    @classmethod
    def from_records(cls, theorem, scenario, records, tolerance, excluded=0, notes=""):
        worst = max((r["violation"] for r in records), default=0.0)
        for r in records:
            r["pass"] = bool(r["violation"] <= tolerance)
        return cls(theorem, scenario, len(records), bool(worst <= tolerance), float(worst),
                   float(tolerance), int(excluded), records, notes)

    def summary(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "summary",
            "theorem": self.theorem,
            "scenario": self.scenario,
            "samples": self.samples,
            "pass": self.passed,
            "worst": _num(self.worst),
            "tolerance": _num(self.tolerance),
            "excluded": self.excluded,
            "notes": self.notes,
        }

    def lines(self):
        """JSON-lines objects: one per tested point, then the summary."""
        out = []
        for k, r in enumerate(self.records):
            rec = {"schema_version": SCHEMA_VERSION, "kind": "point", "theorem": self.theorem,
                   "scenario": self.scenario, "index": k}
            rec.update({key: _clean(v) for key, v in r.items()})
            out.append(rec)
        out.append(self.summary())
        return out


def _num(v):
    v = float(v)
    if np.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


def _clean(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(u) for u in np.asarray(v, dtype=float).tolist()] \
            if np.asarray(v).dtype != object else [_clean(u) for u in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return v


def dump_reports(reports, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            for obj in rep.lines():
                fh.write(json.dumps(obj, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# sampling


@dataclass
class PointSample:
    points: np.ndarray
    requested: int
    excluded: int


def sample_points(field: ValueField, count: int, seed: int = 0, region=None, t_range=None,
                  on_target: bool = False, max_draws: int = 100000) -> PointSample:
    """Seeded uniform draws over ``region`` snapped to grid nodes, filtered by
    ``t_range`` and then by the jump filter.  Draws stop once ``count`` points
    survive; every draw inside the value range is either tested or counted
    as excluded.

    With ``on_target`` only target nodes with a non-target neighbor qualify.
    """
    grid = field.grid
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(grid.lower, float), np.asarray(grid.upper, float)) if region is None \
        else (np.asarray(region[0], float), np.asarray(region[1], float))
    margin = 5
    cells = np.asarray(grid.cells)
    chosen, seen = [], set()
    requested = excluded = 0
    for _ in range(max_draws):
        if len(chosen) >= count:
            break
        idx = np.array(grid.nearest_index(rng.uniform(lo, hi)))
        if np.any(idx < margin) or np.any(idx >= cells - margin):
            continue
        key = tuple(int(i) for i in idx)
        if key in seen:
            continue
        seen.add(key)
        v = field.values[key]
        if on_target:
            if not (field.target_mask[key] and _touches_outside(field, idx)):
                continue
        else:
            if field.target_mask[key]:
                continue
            if t_range is not None and not (t_range[0] <= v <= t_range[1]):
                continue
        requested += 1
        if not on_target and jump_excluded(field, idx):
            excluded += 1
            continue
        chosen.append(grid.node(idx))
    pts = np.array(chosen) if chosen else np.zeros((0, grid.dim))
    return PointSample(pts, requested, excluded)


def _touches_outside(field, idx):
    M = field.target_mask
    for d in range(M.ndim):
        for s in (-1, 1):
            j = np.array(idx)
            j[d] += s
            if 0 <= j[d] < M.shape[d] and not M[tuple(j)]:
                return True
    return False


# --------------------------------------------------------------------------
# per-point analysis


def _angle_to_set(U, A):
    """Smallest angle from each unit row of ``U`` to the unit rows of ``A``."""
    U = np.atleast_2d(U)
    if len(U) == 0:
        return np.zeros(0)
    if A is None or len(A) == 0:
        return np.full(len(U), np.pi)
    c = np.clip(U @ np.asarray(A).T, -1.0, 1.0)
    return np.arccos(c.max(axis=1))


def _unit(U):
    U = np.atleast_2d(np.asarray(U, float))
    if not len(U):
        return U
    return U / np.linalg.norm(U, axis=1, keepdims=True)


@dataclass(eq=False)
class PointAnalysis:
    """Estimated cones and subdifferentials of ``T`` at one point."""

    x: np.ndarray
    value: float
    on_target: bool
    sublevel: ProximalCone
    epi: object
    prox: np.ndarray
    horizontal: np.ndarray
    horizontal_accepted: np.ndarray
    c_max: float
    sigma_max: float
    eta: float


def _crossing_cloud(field: ValueField, t, sl):
    """Nodes with ``T <= t`` inside the index window ``sl`` plus the points
    where ``T`` crosses ``t`` along grid edges (linear interpolation)."""
    grid = field.grid
    V = field.values[sl]
    axes = [grid.lower[d] + np.arange(grid.cells[d])[sl[d]] * grid.spacing[d]
            for d in range(grid.dim)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = V <= t + 1e-9 * max(1.0, abs(t))
    pts = [P[inside]]
    for d in range(grid.dim):
        a = [slice(None)] * grid.dim
        b = [slice(None)] * grid.dim
        a[d] = slice(0, -1)
        b[d] = slice(1, None)
        a, b = tuple(a), tuple(b)
        for src, dst in ((a, b), (b, a)):
            cross = inside[src] & ~inside[dst]
            if not np.any(cross):
                continue
            va, vb = V[src][cross], V[dst][cross]
            fin = np.isfinite(vb)
            frac = np.where(fin, (t - va) / np.where(fin, vb - va, 1.0), 0.0)
            frac = np.clip(frac, 0.0, 1.0)
            pa, pb = P[src][cross], P[dst][cross]
            pts.append(pa + frac[:, None] * (pb - pa))
    return np.vstack(pts)


def sublevel_cloud(field: ValueField, x, eta, level=None):
    """Sampled sublevel set ``{T <= T(x)}`` near ``x``.

    Grid nodes alone form a staircase whose corners carry spurious wide
    normal fans, so the points where ``T`` crosses the level along grid
    edges are added.  ``x`` comes first.
    """
    grid = field.grid
    x = np.asarray(x, float)
    t = _field_value(field, x) if level is None else level
    lo = np.floor((x - eta - np.asarray(grid.lower)) / grid.spacing).astype(int)
    hi = np.ceil((x + eta - np.asarray(grid.lower)) / grid.spacing).astype(int)
    lo = np.clip(lo, 0, np.asarray(grid.cells) - 1)
    hi = np.clip(hi, 0, np.asarray(grid.cells) - 1)
    cloud = _crossing_cloud(field, t, tuple(slice(a, b + 1) for a, b in zip(lo, hi)))
    d = np.linalg.norm(cloud - x, axis=1)
    cloud = cloud[(d <= eta) & (d > 1e-12)]
    return np.vstack([x[None, :], cloud])


def level_cloud(field: ValueField, t, region=None):
    """Whole-grid version of :func:`sublevel_cloud` for level ``t``,
    optionally clipped to a box, with a mask of the crossing points."""
    sl = tuple(slice(None) for _ in range(field.grid.dim))
    cloud = _crossing_cloud(field, t, sl)
    if region is not None:
        lo, hi = (np.asarray(b, float) for b in region)
        cloud = cloud[np.all((cloud >= lo) & (cloud <= hi), axis=1)]
    on_level = eval_T_many(field, cloud) >= t - 1e-9 * max(1.0, abs(t))
    return cloud, on_level


def analyze_point(field: ValueField, F: Multifunction, x,
                  tol: Tolerances = Tolerances()) -> PointAnalysis:
    """Cones and subdifferentials of ``T`` at ``x`` estimated from the field.

    On the target the sublevel cloud is the rasterised target itself, so the
    normal cone is that of the target the solver actually used.
    """
    x = np.asarray(x, float)
    dx = field.dx
    eta = tol.eta_cells * dx
    sigma_max = tol.sigma_factor / dx
    c_max = tol.subgrad_factor / dx
    value = _field_value(field, x)
    on_target = bool(value == 0.0)
    cloud = sublevel_cloud(field, x, eta)
    if on_target and len(cloud) == 1:
        # an isolated target node: every direction is a proximal normal
        D = direction_grid(x.size, default_direction_count(x.size))
        gens = reduce_fan(D, 1e-3)
        sub = ProximalCone(x, gens, np.zeros(len(gens)), eta, D, 0.0)
    else:
        sub = proximal_normals(cloud, x, eta, sigma_max=sigma_max)
    epi = epi_normals(field, x, eta, sigma_max=sigma_max)
    extra = None
    if len(sub.generators):
        h = min_hamiltonian_many(F, np.repeat(x[None, :], len(sub.generators), 0), sub.generators)[0]
        neg = h < -1e-12
        extra = sub.generators[neg] / -h[neg, None]
    cands = subgradient_candidates(field, x, epi, extra=extra)
    prox = cands[subgradient_defect(field, x, cands, eta) <= c_max]
    horiz, flat = horizontal_directions(epi)
    return PointAnalysis(x, value, on_target, sub, epi, prox, horiz, flat, c_max, sigma_max, eta)


def _h(F, x, Z):
    Z = np.atleast_2d(Z)
    if not len(Z):
        return np.zeros(0)
    return min_hamiltonian_many(F, np.repeat(np.asarray(x)[None, :], len(Z), 0), Z)[0]


def _membership(field, pa: PointAnalysis, zetas):
    """Distance of candidate subgradients to the sampled subdifferential,
    or their direct-test slack ``defect * dx`` when that is smaller."""
    zetas = np.atleast_2d(zetas)
    if not len(zetas):
        return np.zeros(0)
    slack = subgradient_defect(field, pa.x, zetas, pa.eta) * field.dx
    if len(pa.prox):
        dist = np.min(np.linalg.norm(zetas[:, None, :] - pa.prox[None, :, :], axis=2), axis=1)
        slack = np.minimum(slack, dist)
    return slack


def _subgradient_membership(field, pa: PointAnalysis, zetas):
    """Membership of ``zetas`` in the proximal subdifferential judged two
    equivalent ways, keeping the better: the subgradient inequality relative
    to ``max(1, |zeta|)``, or ``(zeta, -1)`` passing the epigraph test."""
    zetas = np.atleast_2d(zetas)
    if not len(zetas):
        return np.zeros(0)
    rel = _membership(field, pa, zetas) / np.maximum(1.0, np.linalg.norm(zetas, axis=1))
    pair = _epi_pair_violation(field, pa, _unit(np.hstack([zetas, -np.ones((len(zetas), 1))])))
    return np.minimum(rel, pair)


# --------------------------------------------------------------------------
# individual checks; each returns a dict of violations keyed by check id


def pointwise_violations(field, F, pa: PointAnalysis, tol: Tolerances):
    """Violations of the characterisations at one point (see
    :func:`verify_pointwise`)."""
    th = tol.h_tol(field.dx)
    x = pa.x
    out = {}
    gens = pa.sublevel.generators
    acc = pa.sublevel.accepted if pa.sublevel.accepted is not None else gens
    hg = _h(F, x, gens)
    prox = pa.prox
    hp = _h(F, x, prox)
    # magnitudes below the curvature allowance over the window cannot be told
    # apart from zero, so their directions are not judged
    nz = np.linalg.norm(prox, axis=1) > pa.c_max * pa.eta if len(prox) else np.zeros(0, bool)
    horiz_dirs = np.vstack([_unit(prox[nz]), pa.horizontal_accepted]) if len(prox) \
        else pa.horizontal_accepted
    hh = _h(F, x, pa.horizontal)

    if not pa.on_target:
        # forward inclusion: subgradients are normals with h = -1
        out["subgradient_h"] = (float(np.max(np.abs(hp + 1.0), initial=0.0)), th)
        out["subgradient_direction"] = (
            float(np.max(_angle_to_set(_unit(prox[nz]), acc), initial=0.0)), tol.angle)
        # backward inclusion: normals with h < 0 rescale into subgradients
        neg = hg < -th
        z = gens[neg] / -hg[neg, None] if np.any(neg) else np.zeros((0, x.size))
        out["normal_to_subgradient"] = (float(np.max(_membership(field, pa, z), initial=0.0)),
                                        tol.member)
        # h <= 0 on normals
        out["normal_h_nonpositive"] = (float(np.max(hg, initial=0.0)), th)
        # h = 0 normals are horizontal subgradients and conversely; the
        # forward side only claims normals inside half the band so that
        # slopes near the detection threshold are not decided both ways
        flat = np.abs(hg) <= th / 2
        out["flat_normal_horizontal"] = (
            float(np.max(_angle_to_set(gens[flat], pa.horizontal_accepted), initial=0.0)), tol.angle)
        out["horizontal_h_zero"] = (float(np.max(np.abs(hh), initial=0.0)), th)
        out["horizontal_direction"] = (
            float(np.max(_angle_to_set(pa.horizontal, acc), initial=0.0)), tol.angle)
        # every normal lies on the union of the two families
        out["normal_decomposition"] = (
            float(np.max(_angle_to_set(gens, horiz_dirs), initial=0.0)), tol.angle)
    else:
        # on the target both subdifferentials are cut from the target cone
        # node-sampled subgradient inequalities resolve |zeta| only to within
        # the curvature allowance over the window
        out["target_subgradient_h"] = (float(np.max(np.maximum(-1.0 - hp, 0.0), initial=0.0)),
                                       th + pa.c_max * pa.eta)
        out["target_subgradient_direction"] = (
            float(np.max(_angle_to_set(_unit(prox[nz]), acc), initial=0.0)), tol.angle)
        scale = np.where(hg < -1e-12, 1.0 / np.maximum(-hg, 1e-12), 1.0)
        z = gens * scale[:, None]
        out["target_normal_to_subgradient"] = (
            float(np.max(_subgradient_membership(field, pa, z), initial=0.0)), tol.member)
        out["target_horizontal_h"] = (float(np.max(np.maximum(-hh, 0.0), initial=0.0)), th)
        out["target_horizontal_direction"] = (
            float(np.max(_angle_to_set(pa.horizontal, acc), initial=0.0)), tol.angle)
        flat = hg >= -th / 2
        out["target_flat_normal_horizontal"] = (
            float(np.max(_angle_to_set(gens[flat], pa.horizontal_accepted), initial=0.0)), tol.angle)
    return out


def _bundle(scenario, per_point, points, excluded, prefix, notes=""):
    reports = []
    keys = []
    for d in per_point:
        for k in d:
            if k not in keys:
                keys.append(k)
    for key in keys:
        records, tolerance = [], None
        for x, d in zip(points, per_point):
            if key in d:
                v, tolerance = d[key]
                records.append({"point": list(map(float, x)), "violation": float(v)})
        reports.append(VerificationReport.from_records(f"{prefix}.{key}", scenario, records,
                                                       tolerance, excluded, notes))
    return reports


def verify_pointwise(field: ValueField, F: Multifunction, points,
                     tol: Tolerances = Tolerances(), scenario: str = "", excluded: int = 0,
                     analyses=None):
    """Sampled checks of the subdifferential characterisations at ``points``.

    Off the target: subgradients are sublevel normals with ``h = -1``;
    sublevel normals with ``h < 0`` rescale into subgradients; normals have
    ``h <= 0``; normals with ``h = 0`` are exactly the horizontal
    subgradients; the normal cone is the union of the rays through
    subgradients and the horizontal subgradients.  On the target the
    subgradients are the target normals with ``h >= -1`` and the horizontal
    ones those with ``h >= 0``.
    """
    points = np.atleast_2d(points)
    analyses = analyses or [analyze_point(field, F, x, tol) for x in points]
    per_point = [pointwise_violations(field, F, pa, tol) for pa in analyses]
    return _bundle(scenario, per_point, points, excluded, "pointwise")


def _epi_pair_violation(field, pa: PointAnalysis, pairs):
    """How far unit pairs are from passing the epigraph proximal test: the
    curvature excess times ``dx`` or the angle to the accepted lattice
    pairs, whichever is smaller."""
    pairs = np.atleast_2d(pairs)
    if not len(pairs):
        return np.zeros(0)
    Z, _, _ = epi_samples(field, pa.x, pa.eta)
    excess = np.maximum(proximal_sigma(pairs, Z) - pa.sigma_max, 0.0) * field.dx
    return np.minimum(excess, _angle_to_set(pairs, pa.epi.accepted))


def max_norm_segment(x, count: int = 11):
    """Subgradients ``(l s1, (1-l) s2)``, ``l`` evenly spaced in ``[0, 1]``,
    of ``max(|x1|, |x2|)`` at a point with ``|x1| = |x2|`` and signs ``s``."""
    s = np.sign(np.asarray(x, float))
    lam = np.linspace(0.0, 1.0, count)
    return np.stack([lam * s[0], (1.0 - lam) * s[1]], axis=1)


def epi_violations(field, F, pa: PointAnalysis, tol: Tolerances, segment=None):
    th = tol.h_tol(field.dx)
    x = pa.x
    out = {}
    gens = pa.sublevel.generators
    acc_sub = pa.sublevel.accepted if pa.sublevel.accepted is not None else gens
    # forward: (u, h(x,u)) normalised passes the epigraph test
    hg = _h(F, x, gens)
    pairs = _unit(np.hstack([gens, hg[:, None]])) if len(gens) else np.zeros((0, x.size + 1))
    out["forward"] = (float(np.max(_epi_pair_violation(field, pa, pairs), initial=0.0)),
                      tol.angle)
    # backward: accepted pairs (zeta, alpha) have zeta a normal and h = alpha
    P = pa.epi.pairs
    if len(P):
        zeta, alpha = P[:, :-1], P[:, -1]
        nz = np.linalg.norm(zeta, axis=1) > 1e-9
        hz = _h(F, x, zeta[nz])
        out["backward_h"] = (float(np.max(np.abs(hz - alpha[nz]), initial=0.0)), th)
        out["backward_direction"] = (
            float(np.max(_angle_to_set(_unit(zeta[nz]), acc_sub), initial=0.0)), tol.angle)
    else:
        out["backward_h"] = (0.0, th)
        out["backward_direction"] = (0.0, tol.angle)
    # triviality equivalence
    out["triviality"] = (0.0 if pa.sublevel.empty == pa.epi.empty else 1.0, 0.0)
    if segment is not None and len(segment):
        # known subgradients: (zeta, -1) is an epigraph normal, zeta a
        # sublevel normal and h(x, zeta) = -1
        seg = np.atleast_2d(segment)
        pair_v = _epi_pair_violation(field, pa, _unit(np.hstack([seg, -np.ones((len(seg), 1))])))
        dir_v = _angle_to_set(_unit(seg), acc_sub)
        out["segment_pair"] = (float(np.max(pair_v, initial=0.0)), tol.angle)
        out["segment_direction"] = (float(np.max(dir_v, initial=0.0)), tol.angle)
        out["segment_h"] = (float(np.max(np.abs(_h(F, x, seg) + 1.0), initial=0.0)), th)
    return out


def verify_epi_correspondence(field: ValueField, F: Multifunction, points,
                              tol: Tolerances = Tolerances(), scenario: str = "",
                              excluded: int = 0, analyses=None, segments=None):
    """Both directions of the correspondence between sublevel normals ``u``
    and epigraph normals ``(u, h(x,u))``, plus the equivalence of trivial
    cones.  ``segments`` optionally gives, per point, known subgradients
    whose rays must pass both tests."""
    points = np.atleast_2d(points)
    analyses = analyses or [analyze_point(field, F, x, tol) for x in points]
    segments = segments if segments is not None else [None] * len(points)
    per_point = [epi_violations(field, F, pa, tol, seg) for pa, seg in zip(analyses, segments)]
    return _bundle(scenario, per_point, points, excluded, "epigraph")


def verify_dimension(field: ValueField, F: Multifunction, points, tol: Tolerances = Tolerances(),
                     scenario: str = "", excluded: int = 0, analyses=None):
    """Equal dimension of the sublevel normal cone and the epigraph normal
    cone at every point."""
    points = np.atleast_2d(points)
    analyses = analyses or [analyze_point(field, F, x, tol) for x in points]
    records = []
    flagged = 0
    for pa in analyses:
        a = cone_dimension(pa.sublevel)
        b = cone_dimension(pa.epi.as_cone())
        agree = positive_span_agrees(pa.sublevel) and positive_span_agrees(pa.epi.as_cone())
        flagged += not agree
        records.append({"point": list(map(float, pa.x)), "sublevel_dimension": a,
                        "epigraph_dimension": b, "positive_span_agrees": agree,
                        "violation": float(abs(a - b))})
    notes = f"{flagged} cone(s) where positive span and rank differ" if flagged else ""
    return [VerificationReport.from_records("dimension", scenario, records, 0.0, excluded, notes)]


# --------------------------------------------------------------------------
# propagation along dual arcs


def verify_propagation(field: ValueField, F: Multifunction, arcs,
                       tol: Tolerances = Tolerances(), scenario: str = "", times: int = 9,
                       constancy_tol: float = 1e-3):
    """Checks along certified arcs ``(x(t), p(t))``.

    Per arc, ``h(x(t), -p(t))`` must stay constant.  At ``times`` interior
    times: ``-p`` is a sublevel normal at ``x(t)``; the normalised pair
    ``(-p, h(x, -p))`` passes the epigraph test; when ``h`` is ``-1`` after
    scaling ``p`` the scaled ``-p`` is a proximal subgradient, and when
    ``h`` vanishes ``-p`` is a horizontal direction.  Times where the
    estimation window around ``x(t)`` reaches the rasterised target, or
    that are jump-filtered, are excluded.
    """
    arcs = list(arcs)
    if any(a.certified is not True for a in arcs):
        raise ConfigError("propagation checks need arcs certified against the field")
    eta = tol.eta_cells * field.dx
    constancy, per_point, points = [], [], []
    excluded = 0
    for k, arc in enumerate(arcs):
        constancy.append({"arc": k, "seed": arc.seed, "violation": hamiltonian_constancy(arc, F)})
        h0 = -float(F.max_hamiltonian_many(arc.x[:1], arc.p[:1])[0][0])
        idx = np.unique(np.round(np.linspace(0, len(arc.t) - 1, times + 2)).astype(int))[1:-1]
        for i in idx:
            x, p = arc.x[i], arc.p[i]
            node = np.array(field.grid.nearest_index(x))
            if (not field.grid.contains(x[None, :], margin=eta + field.dx)[0]
                    or _near_target(field, x, eta + field.dx) or jump_excluded(field, node)):
                excluded += 1
                continue
            pa = analyze_point(field, F, x, tol)
            acc = pa.sublevel.accepted if pa.sublevel.accepted is not None \
                else pa.sublevel.generators
            u = -p / np.linalg.norm(p)
            hu = float(_h(F, x, u)[0])
            d = {"sublevel_normal": (float(_angle_to_set(u, acc)[0]), tol.angle),
                 "epigraph_normal": (float(_epi_pair_violation(field, pa, _unit(np.append(u, hu)))[0]),
                                     tol.angle)}
            # h along the arc is exact up to rounding, so the premise is
            # decided at rounding level rather than with the grid tolerance
            flat_arc = abs(h0) <= 1e-9 * float(np.linalg.norm(arc.p[0]))
            if not flat_arc and h0 < 0:
                # membership of zeta in the proximal subdifferential, by the
                # subgradient inequality (relative to |zeta|) or, equivalently
                # by definition, by (zeta, -1) being an epigraph normal
                zeta = -p / -h0
                d["subgradient"] = (float(_subgradient_membership(field, pa, zeta)[0]), tol.member)
            elif flat_arc:
                d["horizontal"] = (float(_angle_to_set(u, pa.horizontal_accepted)[0]), tol.angle)
            per_point.append(d)
            points.append(x)
    reports = [VerificationReport.from_records("propagation.constancy", scenario, constancy,
                                               constancy_tol)]
    reports += _bundle(scenario, per_point, points, excluded, "propagation")
    return reports


# --------------------------------------------------------------------------
# regularity of sublevel sets and of the epigraph


def _near_target(field: ValueField, x, radius):
    grid = field.grid
    lo = np.floor((x - radius - np.asarray(grid.lower)) / grid.spacing).astype(int)
    hi = np.ceil((x + radius - np.asarray(grid.lower)) / grid.spacing).astype(int)
    lo = np.clip(lo, 0, np.asarray(grid.cells) - 1)
    hi = np.clip(hi, 0, np.asarray(grid.cells) - 1)
    return bool(np.any(field.target_mask[tuple(slice(a, b + 1) for a, b in zip(lo, hi))]))


@dataclass(frozen=True)
class RegularityConfig:
    """Sampling and pass criteria of :func:`verify_regularity`.

    ``phi_tol`` and ``epi_tol`` bound the sampled constants (``inf`` only
    asks for a finite value).  Point pairs closer than ``min_separation``
    (default ten grid spacings) are skipped: a boundary displaced by ``d``
    already contributes about ``d / s**2`` at separation ``s``.  ``convex_up_to`` is the largest level whose
    sublevel set is claimed convex; levels above it are reported but not
    judged.
    """

    t_grid: tuple = (0.25, 0.5, 0.75, 1.0)
    epi_t_range: tuple | None = None
    phi_samples: int = 24
    epi_samples: int = 40
    min_separation: float | None = None
    phi_tol: float = float("inf")
    epi_tol: float = float("inf")
    convex_up_to: float | None = None
    convexity_pairs: int = 4000
    seed: int = 0

    def to_json(self):
        return {k: _clean(v) if v is not None else None for k, v in asdict(self).items()}


def sublevel_phi(field: ValueField, t, region=None, samples: int = 24, seed: int = 0,
                 tol: Tolerances = Tolerances(), min_separation=None):
    """Sampled phi-convexity constant of ``{T <= t}``: proximal cones at
    ``samples`` level-crossing points tested against the whole cloud."""
    cloud, on_level = level_cloud(field, t, region)
    base = np.flatnonzero(on_level)
    if not len(base):
        return 0.0, 0
    rng = np.random.default_rng(seed)
    pick = base[rng.permutation(len(base))[:samples]]
    eta = tol.eta_cells * field.dx
    sigma_max = tol.sigma_factor / field.dx
    cones = []
    for k in pick:
        x = cloud[k]
        d = np.linalg.norm(cloud - x, axis=1)
        local = np.vstack([x[None, :], cloud[(d <= eta) & (d > 1e-12)]])
        try:
            cones.append(proximal_normals(local, x, eta, sigma_max=sigma_max))
        except InsufficientSamplingError:
            continue
    sep = 3.0 * field.dx if min_separation is None else min_separation
    return phi_convexity_constant(cloud, cones, sep), len(cones)


def verify_regularity(field: ValueField, F: Multifunction, region,
                      config: RegularityConfig = RegularityConfig(),
                      tol: Tolerances = Tolerances(), scenario: str = ""):
    """Sampled regularity constants over ``region``: the phi-convexity
    constant of sublevel sets on ``config.t_grid``, the epigraph constant
    ``C`` and the midpoint convexity test of each sublevel set.

    Continuity of ``T`` on the region is only spot-checked by the jump
    filter; the reports state it as an assumption.
    """
    sep = 10.0 * field.dx if config.min_separation is None else config.min_separation
    phi_records = []
    for t in config.t_grid:
        phi, count = sublevel_phi(field, t, region, config.phi_samples, config.seed, tol, sep)
        phi_records.append({"t": float(t), "cones": count, "violation": phi})
    assumption = "continuity of T on the region is assumed (jump filter only)"
    reports = [VerificationReport.from_records("regularity.sublevel_phi", scenario, phi_records,
                                               config.phi_tol, notes=assumption)]
    C = epi_phi_convexity(field, region, config.epi_samples, config.seed, config.epi_t_range,
                          tol.eta_cells * field.dx, tol.sigma_factor / field.dx, sep)
    reports.append(VerificationReport.from_records(
        "regularity.epigraph_C", scenario, [{"violation": C}], config.epi_tol, notes=assumption))
    limit = max(config.t_grid) if config.convex_up_to is None else config.convex_up_to
    judged, tau, broken = [], 0.0, False
    for t in config.t_grid:
        ok, worst = check_sublevel_convexity(field, t, config.convexity_pairs, config.seed)
        if not ok:
            broken = True
        elif not broken:
            tau = float(t)
        if t <= limit + 1e-12:
            judged.append({"t": float(t), "violation": worst})
    reports.append(VerificationReport.from_records(
        "regularity.sublevel_convexity", scenario, judged, 0.0,
        notes=f"largest convex level on the grid: {tau:g}"))
    return reports
