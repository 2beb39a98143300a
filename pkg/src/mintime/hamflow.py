"""Hamiltonian flows ``x' = grad_p H(x, p)``, ``p' = -grad_x H(x, p)``,
backward synthesis of candidate optimal arcs from the target, and checks
of the costate growth bounds and of the conservation of ``h(x, -p)``.

The integrator is classical RK4.  When ``F(x)`` is the image of a polytope
the extreme point selected at the start of a step is kept for all four
stages; a change of extreme point between two nodes is located by
bisection and the step is split there, so the flow stays fourth order on
each bang arc.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from .convexset import project
from .dynamics import FD_STEP, LinearDrift, Multifunction, grad_x_H
from .errors import ConfigError, CostateCollapseError, DegenerateCostateError
from .hjbsolve import TargetSet, ValueField, eval_T_many

COLLAPSE = 1e-12
BISECTION_STEPS = 60


@dataclass
class HamiltonianArc:
    """Sampled state/costate pair with increasing times ``t``.

    ``switch[i]`` marks a change of extreme point inside the step that ends
    at node ``i``.  ``certified`` is ``None`` until the arc is compared with
    a value field.
    """

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    dt: float
    switch: np.ndarray
    switch_times: list = dc_field(default_factory=list)
    certified: bool | None = None
    residual: float = float("nan")
    seed: dict = dc_field(default_factory=dict)

    @property
    def horizon(self):
        return float(self.t[-1] - self.t[0])

    @property
    def switches(self):
        return len(self.switch_times)

    def to_csv(self, path):
        write_arcs([self], path)


def write_arcs(arcs, path):
    """One CSV row per node; ``arc`` numbers the arcs in order."""
    n = arcs[0].x.shape[1] if arcs else 0
    names = ["arc", "t"] + [f"x{d + 1}" for d in range(n)] + [f"p{d + 1}" for d in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["switch"])
        for k, arc in enumerate(arcs):
            for i in range(len(arc.t)):
                row = [k, repr(float(arc.t[i]))]
                row += [repr(float(v)) for v in arc.x[i]]
                row += [repr(float(v)) for v in arc.p[i]]
                w.writerow(row + [int(arc.switch[i])])


# --------------------------------------------------------------------------
# vector field


def _label(F, x, p):
    return F.extremal(x, p)[1]


def _velocity(F, x, p, label):
    if label is None:
        return F.extremal(x, p)[0]
    return F.velocity_for_label(x, label)


def _costate_rate(F, x, p, label):
    """``-grad_x H`` along the extreme point ``label``."""
    if isinstance(F, LinearDrift):
        return -F.A.T @ p
    if label is None:
        return -grad_x_H(F, x, p)
    E = np.eye(x.size) * FD_STEP
    g = np.array([p @ (F.velocity_for_label(x + e, label) - F.velocity_for_label(x - e, label))
                  for e in E])
    return -g / (2.0 * FD_STEP)


def _rk4(F, x, p, h, label, sign):
    def f(xs, ps):
        return sign * _velocity(F, xs, ps, label), sign * _costate_rate(F, xs, ps, label)

    k1x, k1p = f(x, p)
    k2x, k2p = f(x + 0.5 * h * k1x, p + 0.5 * h * k1p)
    k3x, k3p = f(x + 0.5 * h * k2x, p + 0.5 * h * k2p)
    k4x, k4p = f(x + h * k3x, p + h * k3p)
    return (x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p))


def _step(F, x, p, h, sign):
    """One step; returns ``(x, p, fraction of h at which the extreme point
    changed or None)``."""
    label = _label(F, x, p)
    x1, p1 = _rk4(F, x, p, h, label, sign)
    if label is None or _label(F, x1, p1) == label:
        return x1, p1, None
    lo, hi = 0.0, 1.0
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        xm, pm = _rk4(F, x, p, mid * h, label, sign)
        if _label(F, xm, pm) == label:
            lo = mid
        else:
            hi = mid
    xs, ps = _rk4(F, x, p, hi * h, label, sign)
    after = _label(F, xs, ps)
    x2, p2 = _rk4(F, xs, ps, (1.0 - hi) * h, after, sign)
    return x2, p2, hi


def integrate_mp(F: Multifunction, x0, p0, horizon: float, dt: float,
                 direction: str = "forward") -> HamiltonianArc:
    """Integrate the Hamiltonian system over ``[0, horizon]``.

    ``forward`` starts from ``(x0, p0)`` at time 0.  ``backward`` runs the
    time-reversed field from ``(x0, p0)`` placed at time ``horizon``; the
    returned arc is still indexed by increasing time, so it ends at
    ``(x0, p0)``.
    """
    x = np.asarray(x0, float).reshape(-1)
    p = np.asarray(p0, float).reshape(-1)
    if x.size != F.dim or p.size != F.dim:
        raise ConfigError(f"state and costate must have dimension {F.dim}")
    if not np.any(p != 0.0):
        raise DegenerateCostateError("initial costate must be nonzero")
    if not (horizon > 0 and dt > 0):
        raise ConfigError("horizon and dt must be positive")
    if dt > horizon / 10.0 * (1 + 1e-12):
        raise ConfigError(f"dt={dt} exceeds horizon/10={horizon / 10}")
    if direction not in ("forward", "backward"):
        raise ConfigError(f"direction must be forward or backward, got {direction!r}")
    steps = int(np.ceil(horizon / dt - 1e-9))
    h = horizon / steps
    sign = 1.0 if direction == "forward" else -1.0
    X = np.empty((steps + 1, x.size))
    P = np.empty_like(X)
    flags = np.zeros(steps + 1, dtype=bool)
    X[0], P[0] = x, p
    events = []
    for i in range(steps):
        x, p, frac = _step(F, x, p, h, sign)
        s = (i + 1) * h
        if not np.all(np.isfinite(p)) or np.linalg.norm(p) < COLLAPSE:
            when = s if direction == "forward" else horizon - s
            raise CostateCollapseError(f"costate collapsed at t={when:.6g}", time=when)
        X[i + 1], P[i + 1] = x, p
        if frac is not None:
            flags[i + 1] = True
            events.append((i + frac) * h)
    t = np.arange(steps + 1) * h
    if direction == "backward":
        X, P, flags = X[::-1].copy(), P[::-1].copy(), np.roll(flags[::-1], 1)
        flags[0] = False
        events = sorted(horizon - e for e in events)
    return HamiltonianArc(t, X, P, h, flags, events)


# --------------------------------------------------------------------------
# synthesis from the target


def _check_normal(K: TargetSet, z, nu, tol=1e-6):
    body = min(K.bodies, key=lambda b: np.linalg.norm(project(b, z) - z))
    if np.linalg.norm(project(body, z) - z) > tol:
        raise ConfigError(f"synthesis point {z.tolist()} is not in the target")
    if np.linalg.norm(project(body, z + nu) - z) > tol:
        raise ConfigError(f"{nu.tolist()} is not an outward normal of the target at {z.tolist()}")


def synthesize_from_target(F: Multifunction, K: TargetSet, z, nu, horizon: float, dt: float,
                           field: ValueField | None = None, cert_tol: float | None = None,
                           samples: int = 21) -> HamiltonianArc:
    """Candidate optimal arc ending at ``z`` on the target.

    The costate ends at ``-nu``, the inward normal, so that the support
    point of ``F`` at the final costate points into the target.  With a
    field the arc is certified when ``|T(x(t)) - (horizon - t)|`` stays
    below ``cert_tol`` (default ``3 dx + 10 dt``) at ``samples`` evenly
    spaced times; otherwise it is returned flagged with its residual.
    """
    z = np.asarray(z, float)
    nu = np.asarray(nu, float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-9:
        raise ConfigError("target normal must have unit length")
    _check_normal(K, z, nu)
    arc = integrate_mp(F, z, -nu, horizon, dt, direction="backward")
    arc.seed = {"z": z.tolist(), "nu": nu.tolist()}
    if field is not None:
        certify_arc(arc, field, cert_tol, samples)
    return arc


def certify_arc(arc: HamiltonianArc, field: ValueField, cert_tol=None, samples: int = 21):
    tol = 3.0 * field.dx + 10.0 * arc.dt if cert_tol is None else float(cert_tol)
    idx = np.unique(np.round(np.linspace(0, len(arc.t) - 1, samples)).astype(int))
    X = arc.x[idx]
    inside = field.grid.contains(X)
    res = np.full(len(idx), np.inf)
    if np.any(inside):
        T = eval_T_many(field, X[inside])
        res[inside] = np.abs(T - (arc.t[-1] - arc.t[idx][inside]))
    arc.residual = float(np.max(res))
    arc.certified = bool(arc.residual <= tol)
    return arc


# --------------------------------------------------------------------------
# checks along arcs


def hamiltonian_constancy(arc: HamiltonianArc, F: Multifunction) -> float:
    """``max_t |h(x(t), -p(t)) - h(x(0), -p(0))|``."""
    H, _ = F.max_hamiltonian_many(arc.x, arc.p)
    return float(np.max(np.abs(H - H[0])))


@dataclass
class DualBoundReport:
    K0: float
    horizon: float
    growth: float
    decay: float
    increment: float
    tolerance: float

    @property
    def worst(self):
        return max(self.growth, self.decay, self.increment)

    @property
    def passed(self):
        return self.worst <= self.tolerance

    def to_json(self):
        return {"K0": self.K0, "horizon": self.horizon, "growth": self.growth,
                "decay": self.decay, "increment": self.increment, "worst": self.worst,
                "tolerance": self.tolerance, "pass": self.passed}


def check_dual_bounds(arc: HamiltonianArc, K0: float, rel_tol: float = 1e-6,
                      chunk: int = 512) -> DualBoundReport:
    """Costate growth bounds over all node pairs ``t1 < t2``:

    ``exp(-K0 d)|p(t2)| <= |p(t1)| <= exp(K0 d)|p(t2)|`` and
    ``|p(t2) - p(t1)| <= K0 exp(K0 d) d |p(t2)|`` with ``d = t2 - t1``.

    Each violation is divided by ``|p(t2)|``; the tolerance is
    ``rel_tol * exp(K0 T)``.
    """
    if not K0 > 0:
        raise ConfigError("K0 must be positive")
    t, P = arc.t, arc.p
    norm = np.linalg.norm(P, axis=1)
    growth = decay = incr = 0.0
    m = len(t)
    for a in range(0, m, chunk):
        i = np.arange(a, min(a + chunk, m))[:, None]
        j = np.arange(m)[None, :]
        later = j > i
        d = np.where(later, t[j] - t[i], 0.0)
        e = np.exp(K0 * d)
        n1, n2 = norm[i], norm[j]
        g = np.where(later, (n1 - e * n2) / n2, -np.inf)
        dc = np.where(later, (np.exp(-K0 * d) * n2 - n1) / n2, -np.inf)
        jump = np.linalg.norm(P[j.ravel()][None, :, :] - P[i.ravel()][:, None, :], axis=2)
        inc = np.where(later, (jump - K0 * e * d * n2) / n2, -np.inf)
        growth = max(growth, float(g.max(initial=0.0)))
        decay = max(decay, float(dc.max(initial=0.0)))
        incr = max(incr, float(inc.max(initial=0.0)))
    tol = rel_tol * float(np.exp(K0 * arc.horizon))
    return DualBoundReport(float(K0), arc.horizon, growth, decay, incr, tol)


def arc_box(arcs, margin: float = 0.1):
    """Bounding box of the states visited by ``arcs``, padded by ``margin``."""
    X = np.vstack([a.x for a in arcs])
    return X.min(axis=0) - margin, X.max(axis=0) + margin


__all__ = [
    "HamiltonianArc", "integrate_mp", "synthesize_from_target", "certify_arc",
    "hamiltonian_constancy", "check_dual_bounds", "DualBoundReport", "write_arcs", "arc_box",
]
