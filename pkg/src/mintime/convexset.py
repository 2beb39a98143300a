"""Compact convex bodies described through their support functions.

Every body answers ``support(p)`` exactly.  Projections use closed forms for
balls and ellipsoids and a Gilbert-Johnson-Keerthi (GJK) min-norm iteration
for polytopes and Minkowski combinations, so all variants share one geometry
kernel.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .directions import direction_grid, nested_directions
from .errors import ConfigError



def _vec(x, name="vector"):
    arr = np.array(x, dtype=float).reshape(-1)
    if arr.size not in (1, 2, 3):
        raise ConfigError(f"{name} must have dimension 1, 2 or 3, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class ConvexBody:
    """Base class.  Subclasses implement ``support_many`` and ``canonical``."""

    dim: int

    def support_many(self, P):
        """Support values and points for a stack of directions ``P`` (k, n)."""
        raise NotImplementedError

    def canonical(self):
        """Representative point returned for the zero direction."""
        raise NotImplementedError

    def support(self, p):
        vals, pts = self.support_many(np.asarray(p, dtype=float).reshape(1, -1))
        return float(vals[0]), pts[0]

    def support_value(self, P):
        return self.support_many(np.atleast_2d(P))[0]

    def to_json(self) -> dict:
        raise NotImplementedError

    def _check_dirs(self, P):
        P = np.asarray(P, dtype=float)
        if P.ndim != 2 or P.shape[1] != self.dim:
            raise ConfigError(f"directions must have shape (k, {self.dim})")
        return P


@dataclass(frozen=True, eq=False)
class Ball(ConvexBody):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, "center"))
        r = float(self.radius)
        if not (np.isfinite(r) and r >= 0.0):
            raise ConfigError("ball radius must be finite and nonnegative")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self):
        return self.center.size

    def canonical(self):
        return self.center.copy()

    def support_many(self, P):
        P = self._check_dirs(P)
        norms = np.linalg.norm(P, axis=1)
        safe = np.where(norms > 0.0, norms, 1.0)
        pts = self.center + self.radius * P / safe[:, None]
        pts[norms == 0.0] = self.center
        return P @ self.center + self.radius * norms, pts

    def to_json(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Polytope(ConvexBody):
    """Convex hull of a vertex list; support ties go to the lowest index."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        if V.ndim == 1:
            V = V.reshape(1, -1)
        if V.shape[0] == 0 or V.shape[1] not in (1, 2, 3):
            raise ConfigError("polytope needs a nonempty vertex list in dimension 1..3")
        if not np.all(np.isfinite(V)):
            raise ConfigError("polytope vertices must be finite")
        object.__setattr__(self, "vertices", _frozen(V))

    @property
    def dim(self):
        return self.vertices.shape[1]

    def canonical(self):
        return self.vertices[0].copy()

    def support_index(self, P):
        P = self._check_dirs(P)
        return np.argmax(P @ self.vertices.T, axis=1)

    def support_many(self, P):
        P = self._check_dirs(P)
        scores = P @ self.vertices.T
        idx = np.argmax(scores, axis=1)
        pts = self.vertices[idx].copy()
        vals = scores[np.arange(len(idx)), idx]
        zero = ~np.any(P != 0.0, axis=1)
        vals[zero] = 0.0
        pts[zero] = self.vertices[0]
        return vals, pts

    def to_json(self):
        return {"type": "polytope", "vertices": self.vertices.tolist()}


@dataclass(frozen=True, eq=False)
class Ellipsoid(ConvexBody):
    """The set ``{center + Q^(1/2) w : |w| <= 1}`` for a PSD ``shape`` Q."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = _vec(self.center, "center")
        Q = np.array(self.shape, dtype=float)
        if Q.shape != (c.size, c.size) or not np.all(np.isfinite(Q)):
            raise ConfigError("ellipsoid shape must be a finite n x n matrix")
        Q = 0.5 * (Q + Q.T)
        evals, evecs = np.linalg.eigh(Q)
        scale = max(1.0, float(np.max(np.abs(evals))))
        if evals.min() < -1e-12 * scale:
            raise ConfigError("ellipsoid shape must be positive semidefinite")
        evals = np.clip(evals, 0.0, None)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", _frozen(Q))
        object.__setattr__(self, "_evals", _frozen(evals))
        object.__setattr__(self, "_evecs", _frozen(evecs))

    @property
    def dim(self):
        return self.center.size

    def canonical(self):
        return self.center.copy()

    def support_many(self, P):
        P = self._check_dirs(P)
        QP = P @ self.shape
        quad = np.maximum(np.einsum("ij,ij->i", QP, P), 0.0)
        root = np.sqrt(quad)
        safe = np.where(root > 0.0, root, 1.0)
        pts = self.center + QP / safe[:, None]
        pts[root == 0.0] = self.center
        return P @ self.center + root, pts

    def to_json(self):
        return {"type": "ellipsoid", "center": self.center.tolist(), "shape": self.shape.tolist()}


@dataclass(frozen=True, eq=False)
class Translate(ConvexBody):
    body: ConvexBody
    offset: np.ndarray

    def __post_init__(self):
        o = _vec(self.offset, "offset")
        if o.size != self.body.dim:
            raise ConfigError("translate offset dimension mismatch")
        object.__setattr__(self, "offset", o)

    @property
    def dim(self):
        return self.body.dim

    def canonical(self):
        return self.body.canonical() + self.offset

    def support_many(self, P):
        P = self._check_dirs(P)
        vals, pts = self.body.support_many(P)
        return vals + P @ self.offset, pts + self.offset

    def to_json(self):
        return {"type": "translate", "body": self.body.to_json(), "offset": self.offset.tolist()}


@dataclass(frozen=True, eq=False)
class ScaledSum(ConvexBody):
    """Minkowski combination ``sum_i c_i B_i`` with ``c_i >= 0``."""

    terms: tuple

    def __post_init__(self):
        terms = tuple((float(c), b) for c, b in self.terms)
        if not terms:
            raise ConfigError("scaled sum needs at least one term")
        dims = {b.dim for _, b in terms}
        if len(dims) != 1:
            raise ConfigError("scaled sum terms must share a dimension")
        if any(not (np.isfinite(c) and c >= 0.0) for c, _ in terms):
            raise ConfigError("scaled sum coefficients must be finite and nonnegative")
        object.__setattr__(self, "terms", terms)

    @property
    def dim(self):
        return self.terms[0][1].dim

    def canonical(self):
        return sum(c * b.canonical() for c, b in self.terms)

    def support_many(self, P):
        P = self._check_dirs(P)
        vals = np.zeros(P.shape[0])
        pts = np.zeros_like(P)
        for c, b in self.terms:
            v, w = b.support_many(P)
            vals += c * v
            pts += c * w
        return vals, pts

    def to_json(self):
        return {
            "type": "scaled_sum",
            "terms": [{"coef": c, "body": b.to_json()} for c, b in self.terms],
        }


def singleton(point) -> Polytope:
    return Polytope(np.asarray(point, dtype=float).reshape(1, -1))


def box(lower, upper) -> Polytope:
    """Axis-aligned box as a polytope; vertex order follows binary counting
    with the first axis varying fastest."""
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    verts = []
    for bits in itertools.product((0, 1), repeat=lower.size):
        bits = bits[::-1]
        verts.append([upper[i] if b else lower[i] for i, b in enumerate(bits)])
    return Polytope(np.array(verts))


def linear_image(body: ConvexBody, M) -> ConvexBody:
    """The body ``{M u : u in body}`` for an ``n x m`` matrix ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != body.dim:
        raise ConfigError(f"matrix with {M.shape[1]} columns cannot map a {body.dim}-d body")
    if isinstance(body, Ball):
        return Ellipsoid(M @ body.center, body.radius**2 * (M @ M.T))
    if isinstance(body, Ellipsoid):
        return Ellipsoid(M @ body.center, M @ body.shape @ M.T)
    if isinstance(body, Polytope):
        return Polytope(body.vertices @ M.T)
    if isinstance(body, Translate):
        return Translate(linear_image(body.body, M), M @ body.offset)
    if isinstance(body, ScaledSum):
        return ScaledSum(tuple((c, linear_image(b, M)) for c, b in body.terms))
    raise ConfigError(f"no linear image rule for {type(body).__name__}")


# --------------------------------------------------------------------------
# projection


def _min_norm_subset(points):
    """Closest point to the origin in the hull of at most n+1 points.

    Returns the point and the indices of the smallest supporting subset.
    """
    k = len(points)
    best, best_idx = None, None
    for size in range(1, k + 1):
        for idx in itertools.combinations(range(k), size):
            S = points[list(idx)]
            if size == 1:
                lam = np.array([1.0])
            else:
                D = S[1:] - S[0]
                G = D @ D.T
                rhs = -D @ S[0]
                try:
                    mu = np.linalg.solve(G, rhs)
                except np.linalg.LinAlgError:
                    continue
                lam = np.concatenate([[1.0 - mu.sum()], mu])
                if np.any(lam < -1e-12):
                    continue
            v = lam @ S
            nv = v @ v
            if best is None or nv < best @ best - 1e-15:
                best, best_idx = v, idx
    return best, list(best_idx)


def _gjk_project(body: ConvexBody, x, tol=1e-13, max_iter=200):
    """Project ``x`` on a body known only through its support map."""
    x = np.asarray(x, dtype=float)
    scale = max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(body.canonical()))))
    v = body.canonical() - x
    simplex = [v]
    for _ in range(max_iter):
        if v @ v <= (tol * scale) ** 2:
            break
        _, w = body.support(-v)
        w = w - x
        if v @ v - v @ w <= tol * scale * max(np.sqrt(v @ v), tol):
            break
        pts = np.array(simplex + [w])
        v, keep = _min_norm_subset(pts)
        simplex = [pts[i] for i in keep]
        if len(simplex) > body.dim:
            # origin inside a full-dimensional simplex
            if v @ v <= (tol * scale) ** 2:
                break
    return v + x


def _project_ellipsoid(body: Ellipsoid, x):
    y = body._evecs.T @ (x - body.center)
    q = body._evals
    pos = q > 1e-14 * max(1.0, q.max(initial=0.0))
    z = np.zeros_like(y)
    if not np.any(pos):
        return body.center.copy()
    yp, qp = y[pos], q[pos]
    if np.sum(yp**2 / qp) <= 1.0 and np.allclose(y[~pos], 0.0, atol=1e-15):
        return np.asarray(x, dtype=float).copy()

    def excess(lam):
        return np.sum(qp * yp**2 / (qp + lam) ** 2) - 1.0

    if excess(0.0) <= 0.0:
        lam = 0.0
    else:
        hi = max(1.0, float(np.sqrt(np.sum(qp * yp**2))))
        while excess(hi) > 0.0:
            hi *= 2.0
        lam = brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-15)
    z[pos] = qp * yp / (qp + lam)
    return body.center + body._evecs @ z


def project(body: ConvexBody, x) -> np.ndarray:
    """Euclidean projection of ``x`` on ``body``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if isinstance(body, Ball):
        d = x - body.center
        nd = np.linalg.norm(d)
        if nd <= body.radius:
            return x.copy()
        return body.center + body.radius * d / nd
    if isinstance(body, Translate):
        return project(body.body, x - body.offset) + body.offset
    if isinstance(body, Ellipsoid):
        return _project_ellipsoid(body, x)
    return _gjk_project(body, x)


def distance(body: ConvexBody, x) -> float:
    return float(np.linalg.norm(project(body, x) - np.asarray(x, dtype=float)))


def contains(body: ConvexBody, x, tol=1e-12) -> bool:
    return distance(body, x) <= tol


# --------------------------------------------------------------------------
# set metrics


def support_deviation(A: ConvexBody, B: ConvexBody, directions: int = 720) -> float:
    """Largest distance between support points of ``A`` and ``B`` over unit
    directions.  Directions come from a prefix-nested lattice, so the value
    never decreases as ``directions`` grows."""
    if directions < 8:
        raise ConfigError("support_deviation needs at least 8 directions")
    D = nested_directions(A.dim, directions)
    _, pa = A.support_many(D)
    _, pb = B.support_many(D)
    return float(np.max(np.linalg.norm(pa - pb, axis=1)))


def hausdorff(A: ConvexBody, B: ConvexBody, directions: int = 720) -> float:
    """Hausdorff distance of convex bodies via the support-value gap."""
    if directions < 8:
        raise ConfigError("hausdorff needs at least 8 directions")
    D = nested_directions(A.dim, directions)
    return float(np.max(np.abs(A.support_value(D) - B.support_value(D))))


def check_a_regular(body: ConvexBody, a: float, pair_samples: int = 64,
                    lam_grid: int = 9, directions: int | None = None,
                    seed: int = 0, tol: float = 1e-9):
    """Test whether every chord ball ``B(lam x1 + (1-lam) x0, a lam (1-lam)
    |x1-x0|^2)`` lies in the body.

    Chord endpoints are support points of the body in seeded directions, so
    for polytopes they are vertices.  Containment is checked by support
    dominance over a uniform direction lattice.

    Returns:
        ``(passed, worst_violation)`` where the violation is the largest
        amount by which a chord ball sticks out in some lattice direction.
    """
    if not (np.isfinite(a) and a > 0.0):
        raise ConfigError("a-regularity constant must be positive")
    if pair_samples < 1:
        raise ConfigError("pair_samples must be at least 1")
    n = body.dim
    if directions is None:
        directions = {1: 2, 2: 360, 3: 642}[n]
    D = direction_grid(n, directions)
    h_body = body.support_value(D)
    _, boundary = body.support_many(D)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(D), size=pair_samples)
    j = rng.integers(0, len(D), size=pair_samples)
    x0, x1 = boundary[i], boundary[j]
    lams = np.arange(1, lam_grid + 1) / (lam_grid + 1)
    worst = -np.inf
    for lam in lams:
        mids = lam * x1 + (1.0 - lam) * x0
        radii = a * lam * (1.0 - lam) * np.sum((x1 - x0) ** 2, axis=1)
        excess = mids @ D.T + radii[:, None] - h_body[None, :]
        worst = max(worst, float(excess.max()))
    worst = max(worst, 0.0)
    return worst <= tol, worst


# --------------------------------------------------------------------------
# serialization


def body_from_json(doc: dict) -> ConvexBody:
    """Build a body from its JSON description."""
    if not isinstance(doc, dict) or "type" not in doc:
        raise ConfigError("body description needs a 'type' field")
    kind = str(doc["type"]).lower()
    try:
        if kind == "ball":
            return Ball(doc["center"], doc["radius"])
        if kind == "polytope":
            return Polytope(doc["vertices"])
        if kind == "ellipsoid":
            return Ellipsoid(doc["center"], doc["shape"])
        if kind in ("point", "singleton"):
            return singleton(doc["center"])
        if kind == "box":
            return box(doc["lower"], doc["upper"])
        if kind == "translate":
            return Translate(body_from_json(doc["body"]), doc["offset"])
        if kind in ("scaled_sum", "sum"):
            return ScaledSum(tuple((t["coef"], body_from_json(t["body"])) for t in doc["terms"]))
    except KeyError as exc:
        raise ConfigError(f"body of type {kind!r} is missing field {exc}") from None
    raise ConfigError(f"unknown body type {kind!r}")


def bodies_from_json(doc) -> list:
    if isinstance(doc, list):
        return [body_from_json(d) for d in doc]
    if isinstance(doc, dict) and doc.get("type") == "union":
        return [body_from_json(d) for d in doc["bodies"]]
    return [body_from_json(doc)]


__all__: Sequence[str] = [
    "ConvexBody", "Ball", "Polytope", "Ellipsoid", "Translate", "ScaledSum",
    "singleton", "box", "linear_image", "project", "distance", "contains",
    "support_deviation", "hausdorff", "check_a_regular", "body_from_json",
    "bodies_from_json",
]
