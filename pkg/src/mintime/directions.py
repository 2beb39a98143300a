"""Deterministic unit-direction lattices in one, two and three dimensions."""

from functools import lru_cache

import numpy as np

ICOSPHERE_COUNTS = {12: 0, 42: 1, 162: 2, 642: 3, 2562: 4, 10242: 5}


def uniform_circle(count, offset=0.0):
    """Unit vectors at equally spaced angles ``offset + 2*pi*k/count``."""
    angles = offset + 2.0 * np.pi * np.arange(count) / count
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


@lru_cache(maxsize=8)
def _icosphere_cached(level):
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        midpoint = {}
        new_faces = []

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    out = np.array(verts)
    out.setflags(write=False)
    return out


def icosphere(level):
    """Vertices of a subdivided icosahedron projected to the unit sphere.

    Level 4 gives the 2562-node lattice used for three-dimensional normal
    cone estimation.
    """
    return _icosphere_cached(int(level)).copy()


def fibonacci_sphere(count):
    """Fibonacci lattice of ``count`` nearly uniform points on the sphere."""
    k = np.arange(count) + 0.5
    z = 1.0 - 2.0 * k / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = np.pi * (1.0 + np.sqrt(5.0)) * k
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def direction_grid(n, count):
    """Uniform direction lattice used by the normal-cone estimators.

    For ``n == 3`` an icosphere is returned when ``count`` is one of its node
    counts, otherwise a Fibonacci lattice.
    """
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        return uniform_circle(count)
    if n == 3:
        if count in ICOSPHERE_COUNTS:
            return icosphere(ICOSPHERE_COUNTS[count])
        return fibonacci_sphere(count)
    raise ValueError(f"unsupported dimension {n}")


def default_direction_count(n):
    return {1: 2, 2: 360, 3: 2562}[n]


def grid_resolution(n, count):
    """Largest angular gap (radians) between a unit vector and the lattice."""
    if n == 1:
        return 0.0
    if n == 2:
        return np.pi / count
    # spherical cap covering estimate for near-uniform lattices
    return 2.0 * np.sqrt(4.0 / count)


def _van_der_corput(count, base=2):
    out = np.empty(count)
    for i in range(count):
        q, denom, k = 0.0, 1.0, i
        while k:
            denom *= base
            k, rem = divmod(k, base)
            q += rem / denom
        out[i] = q
    return out


def nested_directions(n, count):
    """Prefix-nested lattice: the first ``m`` directions of ``count`` equal
    ``nested_directions(n, m)``, so set metrics maximized over them grow
    monotonically with ``count``."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        angles = 2.0 * np.pi * _van_der_corput(count, 2)
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if n == 3:
        u = _van_der_corput(count + 1, 2)[1:]
        v = _van_der_corput(count + 1, 3)[1:]
        z = 1.0 - 2.0 * u
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        theta = 2.0 * np.pi * v
        return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    raise ValueError(f"unsupported dimension {n}")
