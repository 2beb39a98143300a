"""Set-valued dynamics, their Hamiltonians and sampled regularity estimates.

Three forms are supported:

* ``Isotropic``: ``F(x) = Ball(0, r(x))``,
* ``LinearDrift``: ``F(x) = {A x + u : u in U}``,
* ``AffineControl``: ``F(x) = {f(x) + g(x) u : u in U}``.

``H(x, p)`` is the support function of ``F(x)`` at ``p`` and
``h(x, z) = -H(x, -z)`` its minimized counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convexset import (Ball, ConvexBody, Polytope, ScaledSum, Translate, body_from_json,
                        hausdorff, linear_image, support_deviation)
from .directions import direction_grid
from .errors import ConfigError, DegenerateCostateError
from .expr import Expr, VectorExpr

FD_STEP = 1e-5


@dataclass(frozen=True)
class HamiltonianEval:
    value: float
    extremal_point: np.ndarray


def _control_samples(U: ConvexBody, count: int) -> np.ndarray:
    """Extreme points of ``U``: vertices of a polytope, support points on a
    direction lattice otherwise."""
    if isinstance(U, Polytope):
        return np.unique(U.vertices, axis=0)
    D = direction_grid(U.dim, count) if U.dim != 1 else np.array([[1.0], [-1.0]])
    _, pts = U.support_many(D)
    return np.unique(np.round(pts, 14), axis=0)


class Multifunction:
    """Base class holding declared constants and shared helpers."""

    form = "abstract"

    def __init__(self, dim, L=None, gamma=None, c=None, kappa=None):
        if dim not in (1, 2, 3):
            raise ConfigError(f"state dimension must be 1, 2 or 3, got {dim}")
        self.dim = dim
        self.L = L
        self.gamma = gamma
        self.c = c
        self.kappa = kappa

    # subclasses implement these three
    def at(self, x) -> ConvexBody:
        raise NotImplementedError

    def max_hamiltonian_many(self, X, P):
        raise NotImplementedError

    def velocity_samples(self, X, count):
        raise NotImplementedError

    def extremal(self, x, p):
        """Support point of ``F(x)`` at ``p`` and a discrete label identifying
        which extreme point of the control set was used (``None`` when the
        control set is smooth)."""
        _, pts = self.max_hamiltonian_many(np.atleast_2d(x), np.atleast_2d(p))
        return pts[0], None

    def velocity_for_label(self, x, label):
        raise NotImplementedError

    def constants(self):
        return {"L": self.L, "gamma": self.gamma, "c": self.c, "kappa": self.kappa}

    def to_json(self) -> dict:
        raise NotImplementedError

    def _check_points(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise ConfigError(f"points must have trailing dimension {self.dim}")
        return X


class Isotropic(Multifunction):
    form = "isotropic"

    def __init__(self, dim, radius, **constants):
        super().__init__(dim, **constants)
        if isinstance(radius, (int, float)):
            radius = Expr(repr(float(radius)), dim)
        elif isinstance(radius, str):
            radius = Expr(radius, dim)
        self.radius = radius

    def _r(self, X):
        return np.maximum(self.radius(X), 0.0)

    def at(self, x):
        x = self._check_points(x).reshape(-1)
        return Ball(np.zeros(self.dim), float(self._r(x[None, :])[0]))

    def max_hamiltonian_many(self, X, P):
        X, P = self._check_points(X), self._check_points(P)
        r = self._r(X)
        norms = np.linalg.norm(P, axis=-1)
        safe = np.where(norms > 0.0, norms, 1.0)
        pts = r[..., None] * P / safe[..., None]
        return r * norms, pts

    def velocity_samples(self, X, count):
        X = self._check_points(X)
        D = direction_grid(self.dim, count) if self.dim > 1 else np.array([[1.0], [-1.0]])
        return self._r(X)[..., None, None] * D

    def to_json(self):
        src = getattr(self.radius, "source", None)
        return {"form": self.form, "radius_expr": src}


class LinearDrift(Multifunction):
    form = "linear_drift"

    def __init__(self, A, U: ConvexBody, **constants):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        super().__init__(A.shape[0], **constants)
        if A.shape != (self.dim, self.dim) or U.dim != self.dim:
            raise ConfigError("LinearDrift needs a square A matching the control set dimension")
        self.A = A
        self.U = U

    def at(self, x):
        x = self._check_points(x).reshape(-1)
        return Translate(self.U, self.A @ x)

    def max_hamiltonian_many(self, X, P):
        X, P = self._check_points(X), self._check_points(P)
        shape = np.broadcast_shapes(X.shape, P.shape)
        X = np.broadcast_to(X, shape).reshape(-1, self.dim)
        P = np.broadcast_to(P, shape).reshape(-1, self.dim)
        drift = X @ self.A.T
        vals, pts = self.U.support_many(P)
        vals = vals + np.einsum("ij,ij->i", drift, P)
        return vals.reshape(shape[:-1]), (pts + drift).reshape(shape)

    def velocity_samples(self, X, count):
        X = self._check_points(X)
        S = _control_samples(self.U, count)
        return (X @ self.A.T)[..., None, :] + S

    def extremal(self, x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        if isinstance(self.U, Polytope):
            k = int(self.U.support_index(p[None, :])[0])
            return self.velocity_for_label(x, k), k
        return super().extremal(x, p)

    def velocity_for_label(self, x, label):
        return self.A @ np.asarray(x, float) + self.U.vertices[label]

    def to_json(self):
        return {"form": self.form, "A": self.A.tolist(), "U": self.U.to_json()}


class AffineControl(Multifunction):
    form = "affine_control"

    def __init__(self, f, g, U: ConvexBody, dim=None, **constants):
        if dim is None:
            dim = len(f) if not callable(f) else None
        super().__init__(dim, **constants)
        self.f = f if callable(f) else VectorExpr(f, dim)
        self.g = g if callable(g) else VectorExpr(g, dim)
        self.U = U
        probe = self.g(np.zeros((1, dim)))
        if probe.shape != (1, dim, U.dim):
            raise ConfigError(f"g must be a {dim} x {U.dim} matrix field")

    def at(self, x):
        x = self._check_points(x).reshape(1, -1)
        return Translate(linear_image(self.U, self.g(x)[0]), self.f(x)[0])

    def max_hamiltonian_many(self, X, P):
        X, P = self._check_points(X), self._check_points(P)
        shape = np.broadcast_shapes(X.shape, P.shape)
        X = np.broadcast_to(X, shape).reshape(-1, self.dim)
        P = np.broadcast_to(P, shape).reshape(-1, self.dim)
        fx, G = self.f(X), self.g(X)
        Q = np.einsum("kij,ki->kj", G, P)
        uv, up = self.U.support_many(Q)
        vals = np.einsum("ij,ij->i", fx, P) + uv
        pts = fx + np.einsum("kij,kj->ki", G, up)
        return vals.reshape(shape[:-1]), pts.reshape(shape)

    def velocity_samples(self, X, count):
        X = self._check_points(X)
        S = _control_samples(self.U, count)
        fx, G = self.f(X), self.g(X)
        return fx[..., None, :] + np.einsum("...ij,vj->...vi", G, S)

    def extremal(self, x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        if isinstance(self.U, Polytope):
            G = self.g(x[None, :])[0]
            k = int(self.U.support_index((G.T @ p)[None, :])[0])
            return self.velocity_for_label(x, k), k
        return super().extremal(x, p)

    def velocity_for_label(self, x, label):
        x = np.asarray(x, float)[None, :]
        return self.f(x)[0] + self.g(x)[0] @ self.U.vertices[label]

    def to_json(self):
        return {
            "form": self.form,
            "f_expr": getattr(self.f, "sources", None),
            "g_expr": getattr(self.g, "sources", None),
            "U": self.U.to_json(),
        }


def multifunction_from_json(doc: dict, dim: int) -> Multifunction:
    """Build dynamics from the scenario ``dynamics`` block."""
    if not isinstance(doc, dict):
        raise ConfigError("dynamics must be a JSON object")
    form = str(doc.get("form", "")).lower().replace("-", "_")
    constants = {k: doc[k] for k in ("L", "gamma", "c", "kappa") if doc.get(k) is not None}
    try:
        if form == "isotropic":
            return Isotropic(dim, Expr(str(doc["radius_expr"]), dim), **constants)
        if form in ("linear_drift", "lineardrift", "linear"):
            return LinearDrift(doc["A"], body_from_json(doc["U"]), **constants)
        if form in ("affine_control", "affinecontrol", "affine"):
            return AffineControl(doc["f_expr"], doc["g_expr"], body_from_json(doc["U"]),
                                 dim=dim, **constants)
    except KeyError as exc:
        raise ConfigError(f"dynamics of form {form!r} is missing field {exc}") from None
    raise ConfigError(f"unknown dynamics form {form!r}")


# --------------------------------------------------------------------------
# Hamiltonians


def max_hamiltonian(F: Multifunction, x, p) -> HamiltonianEval:
    vals, pts = F.max_hamiltonian_many(np.atleast_2d(np.asarray(x, float)),
                                       np.atleast_2d(np.asarray(p, float)))
    return HamiltonianEval(float(vals[0]), pts[0])


def min_hamiltonian(F: Multifunction, x, zeta) -> HamiltonianEval:
    """``h(x, zeta) = min over F(x) of <v, zeta>``, computed as ``-H(x, -zeta)``."""
    ev = max_hamiltonian(F, x, -np.asarray(zeta, float))
    return HamiltonianEval(-ev.value, ev.extremal_point)


def min_hamiltonian_many(F: Multifunction, X, Z):
    vals, pts = F.max_hamiltonian_many(X, -np.asarray(Z, float))
    return -vals, pts


def grad_x_H(F: Multifunction, x, p, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of ``H(., p)`` at ``x``."""
    p = np.asarray(p, float)
    if not np.any(p != 0.0):
        raise DegenerateCostateError("grad_x_H needs a nonzero costate")
    if not step > 0.0:
        raise ConfigError("finite-difference step must be positive")
    x = np.asarray(x, float)
    E = np.eye(F.dim) * step
    X = np.concatenate([x + E, x - E])
    vals, _ = F.max_hamiltonian_many(X, np.broadcast_to(p, X.shape))
    return (vals[:F.dim] - vals[F.dim:]) / (2.0 * step)


# --------------------------------------------------------------------------
# sampled certificates


def _box(box):
    lo, hi = (np.asarray(b, float).reshape(-1) for b in box)
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ConfigError("box bounds must be ordered per axis")
    return lo, hi


def _pairs(box, pairs, seed, local_fraction=0.5):
    """Point pairs in a box: half spread over the box, half local displacements
    along a direction lattice that contains the coordinate axes."""
    lo, hi = _box(box)
    rng = np.random.default_rng(seed)
    n = lo.size
    n_local = int(round(pairs * local_fraction))
    n_far = pairs - n_local
    X = rng.uniform(lo, hi, size=(pairs, n))
    Y = np.empty_like(X)
    Y[:n_far] = rng.uniform(lo, hi, size=(n_far, n))
    if n_local:
        dirs = np.concatenate([np.eye(n), -np.eye(n),
                               direction_grid(n, 16) if n > 1 else np.eye(1)])
        d = dirs[np.arange(n_local) % len(dirs)]
        delta = 1e-3 * float(np.min(hi - lo))
        base = np.clip(X[n_far:], lo + delta, hi - delta)
        X[n_far:] = base
        Y[n_far:] = base + delta * d
    return X, Y


def certify_lipschitz(F: Multifunction, box, pairs: int = 200, seed: int = 0,
                      directions: int = 720) -> float:
    """Largest sampled ``hausdorff(F(x), F(y)) / |x - y|``."""
    if pairs < 1:
        raise ConfigError("pairs must be at least 1")
    X, Y = _pairs(box, pairs, seed)
    best = 0.0
    for x, y in zip(X, Y):
        d = np.linalg.norm(x - y)
        if d > 0.0:
            best = max(best, hausdorff(F.at(x), F.at(y), directions) / d)
    return best


def certify_growth(F: Multifunction, box, samples: int = 200, seed: int = 0,
                   directions: int = 360) -> float:
    """Largest sampled ``max{|v| : v in F(x)} / (1 + |x|)``; the box corners
    and center are always included."""
    lo, hi = _box(box)
    rng = np.random.default_rng(seed)
    n = lo.size
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)], indexing="ij"))
    corners = corners.reshape(n, -1).T
    X = np.concatenate([corners, [(lo + hi) / 2.0], rng.uniform(lo, hi, size=(samples, n))])
    D = direction_grid(n, directions) if n > 1 else np.array([[1.0], [-1.0]])
    best = 0.0
    for x in X:
        _, pts = F.max_hamiltonian_many(np.broadcast_to(x, D.shape), D)
        best = max(best, float(np.linalg.norm(pts, axis=1).max()) / (1.0 + np.linalg.norm(x)))
    return best


def certify_class_L(F: Multifunction, box, pairs: int = 200, lam_grid: int = 9,
                    seed: int = 0, directions: int = 720) -> float:
    """Largest sampled ``hausdorff(F(m), lam F(x) + (1-lam) F(y)) /
    (lam (1-lam) |x-y|^2)`` with ``m = lam x + (1-lam) y``."""
    if lam_grid < 3:
        raise ConfigError("lam_grid must be at least 3")
    lo, hi = _box(box)
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, size=(pairs, lo.size))
    Y = rng.uniform(lo, hi, size=(pairs, lo.size))
    lams = np.arange(1, lam_grid + 1) / (lam_grid + 1)
    best = 0.0
    for x, y in zip(X, Y):
        d2 = float(np.sum((x - y) ** 2))
        if d2 == 0.0:
            continue
        Fx, Fy = F.at(x), F.at(y)
        for lam in lams:
            combo = ScaledSum(((lam, Fx), (1.0 - lam, Fy)))
            gap = hausdorff(F.at(lam * x + (1.0 - lam) * y), combo, directions)
            best = max(best, gap / (lam * (1.0 - lam) * d2))
    return best


def certify_H_semiconvexity(F: Multifunction, p, box, samples: int = 500,
                            step: float = 0.1, directions: int = 16,
                            seed: int = 0) -> float:
    """Smallest ``c >= 0`` with ``H(x+h,p) + H(x-h,p) - 2 H(x,p) >= -c |h|^2``
    over sampled ``x`` and displacements ``h`` of length ``step`` along a
    direction lattice, keeping the segment inside the box."""
    p = np.asarray(p, float)
    if abs(np.linalg.norm(p) - 1.0) > 1e-9:
        raise ConfigError("semiconvexity certificate needs a unit costate")
    lo, hi = _box(box)
    rng = np.random.default_rng(seed)
    n = lo.size
    X = rng.uniform(lo, hi, size=(samples, n))
    D = step * (direction_grid(n, directions) if n > 1 else np.array([[1.0]]))
    best = 0.0
    for h in D:
        ok = np.all((X + h >= lo) & (X + h <= hi) & (X - h >= lo) & (X - h <= hi), axis=1)
        Xs = X[ok]
        if not len(Xs):
            continue
        P = np.broadcast_to(p, Xs.shape)
        hp, _ = F.max_hamiltonian_many(Xs + h, P)
        hm, _ = F.max_hamiltonian_many(Xs - h, P)
        h0, _ = F.max_hamiltonian_many(Xs, P)
        second = hp + hm - 2.0 * h0
        best = max(best, float(np.max(-second)) / float(h @ h))
    return max(best, 0.0)


def certify_support_lipschitz(F: Multifunction, box, pairs: int = 200,
                              directions: int = 720, seed: int = 0) -> float:
    """Largest sampled ``support_deviation(F(x), F(y)) / |x - y|``."""
    X, Y = _pairs(box, pairs, seed)
    best = 0.0
    for x, y in zip(X, Y):
        d = np.linalg.norm(x - y)
        if d > 0.0:
            best = max(best, support_deviation(F.at(x), F.at(y), directions) / d)
    return best
