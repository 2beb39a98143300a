"""Compiled inner loops of the semi-Lagrangian solver."""

import numpy as np
from numba import njit

SNAP = 1e-9


@njit(cache=True)
def _unravel(c, shape, order, idx):
    n = shape.size
    for d in range(n - 1, -1, -1):
        k = c % shape[d]
        c //= shape[d]
        idx[d] = k if order[d] > 0 else shape[d] - 1 - k


@njit(cache=True)
def _locate(x0, vel_k, step, lower, spacing, shape, cell, frac):
    """Cell and fractional offsets of ``x0 + step*vel_k``; False outside the
    grid."""
    for d in range(shape.size):
        rel = (x0[d] + step * vel_k[d] - lower[d]) / spacing[d]
        if rel < -SNAP or rel > shape[d] - 1 + SNAP:
            return False
        c = int(np.floor(rel + SNAP))
        if c > shape[d] - 2:
            c = shape[d] - 2
        if c < 0:
            c = 0
        f = rel - c
        if abs(f) < SNAP:
            f = 0.0
        elif abs(f - 1.0) < SNAP:
            f = 1.0
        cell[d] = c
        frac[d] = f
    return True


@njit(cache=True)
def _interpolate(values, flat, strides, cell, frac):
    """``(sum of weighted values at other corners, weight on node flat)``."""
    n = cell.size
    acc = 0.0
    wself = 0.0
    for corner in range(1 << n):
        w = 1.0
        pos = 0
        for d in range(n):
            bit = (corner >> d) & 1
            w *= frac[d] if bit else 1.0 - frac[d]
            pos += (cell[d] + bit) * strides[d]
        if w <= 0.0:
            continue
        if pos == flat:
            wself += w
        else:
            acc += w * values[pos]
    return acc, wself


@njit(cache=True)
def _candidate(values, big, flat, vel_k, step, lower, spacing, shape, strides, x0, cell, frac):
    """Value of ``step + I[T](x + step*v)`` with the node's own weight solved
    for exactly; returns ``big`` when the foot leaves the grid."""
    if not _locate(x0, vel_k, step, lower, spacing, shape, cell, frac):
        return big
    acc, wself = _interpolate(values, flat, strides, cell, frac)
    if wself >= 1.0 - 1e-12:
        return big
    return (step + acc) / (1.0 - wself)


@njit(cache=True)
def _exit_step(vel_k, spacing):
    best = np.inf
    for d in range(vel_k.size):
        a = abs(vel_k[d])
        if a > 1e-14:
            s = spacing[d] / a
            if s < best:
                best = s
    return best


@njit(cache=True)
def _best(values, big, flat, vel, lower, spacing, shape, strides, tau, cell_exit, x0, cell, frac):
    best = big
    arg = -1
    for k in range(vel.shape[1]):
        vk = vel[flat, k]
        step = _exit_step(vk, spacing) if cell_exit else tau
        if not np.isfinite(step):
            continue
        cand = _candidate(values, big, flat, vk, step, lower, spacing, shape, strides, x0, cell, frac)
        if cand < best:
            best = cand
            arg = k
    return best, arg


@njit(cache=True)
def _node(c, shape, strides, order, lower, spacing, idx, x0):
    _unravel(c, shape, order, idx)
    flat = 0
    for d in range(shape.size):
        flat += idx[d] * strides[d]
        x0[d] = lower[d] + idx[d] * spacing[d]
    return flat


@njit(cache=True)
def sweep(values, is_target, big, vel, lower, spacing, shape, strides, order, tau, cell_exit):
    """One Gauss-Seidel pass in the axis directions given by ``order``.

    Returns ``(max decrease among nodes below big, number of nodes that
    left big)``.
    """
    n = shape.size
    idx = np.empty(n, dtype=np.int64)
    x0 = np.empty(n)
    cell = np.empty(n, dtype=np.int64)
    frac = np.empty(n)
    change = 0.0
    newly = 0
    for c in range(values.size):
        flat = _node(c, shape, strides, order, lower, spacing, idx, x0)
        if is_target[flat]:
            continue
        old = values[flat]
        best, _ = _best(values, big, flat, vel, lower, spacing, shape, strides, tau, cell_exit,
                        x0, cell, frac)
        if best < old:
            values[flat] = best
            if old >= big:
                newly += 1
            elif old - best > change:
                change = old - best
    return change, newly


@njit(cache=True)
def bellman_residual(values, is_target, big, vel, lower, spacing, shape, strides, tau, cell_exit,
                     cutoff, policy):
    """Largest ``|T(x) - min_v (step + I[T](x + step v))|`` over non-target
    nodes below ``cutoff``, evaluated without updating.  The minimizing
    velocity index of every node is written to ``policy`` (-1 if none)."""
    n = shape.size
    idx = np.empty(n, dtype=np.int64)
    x0 = np.empty(n)
    order = np.ones(n, dtype=np.int64)
    cell = np.empty(n, dtype=np.int64)
    frac = np.empty(n)
    worst = 0.0
    for c in range(values.size):
        flat = _node(c, shape, strides, order, lower, spacing, idx, x0)
        policy[flat] = -1
        if is_target[flat] or values[flat] >= cutoff:
            continue
        best, arg = _best(values, big, flat, vel, lower, spacing, shape, strides, tau, cell_exit,
                          x0, cell, frac)
        policy[flat] = arg
        r = abs(values[flat] - best)
        if r > worst:
            worst = r
    return worst


@njit(cache=True)
def exit_weight_sweep(weight, is_target, policy, vel, lower, spacing, shape, strides, order, tau,
                      cell_exit):
    """One Gauss-Seidel pass of the exit weight under a fixed policy: the
    interpolation mass that eventually leaves the grid instead of reaching
    the target.  Returns the largest change."""
    n = shape.size
    idx = np.empty(n, dtype=np.int64)
    x0 = np.empty(n)
    cell = np.empty(n, dtype=np.int64)
    frac = np.empty(n)
    change = 0.0
    for c in range(weight.size):
        flat = _node(c, shape, strides, order, lower, spacing, idx, x0)
        if is_target[flat]:
            continue
        k = policy[flat]
        new = 1.0
        if k >= 0:
            vk = vel[flat, k]
            step = _exit_step(vk, spacing) if cell_exit else tau
            if _locate(x0, vk, step, lower, spacing, shape, cell, frac):
                acc, wself = _interpolate(weight, flat, strides, cell, frac)
                if wself < 1.0 - 1e-12:
                    new = min(1.0, acc / (1.0 - wself))
        d = abs(new - weight[flat])
        if d > change:
            change = d
        weight[flat] = new
    return change
