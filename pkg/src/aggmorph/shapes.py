"""Synthetic reference solids used by tests, the CLI fixtures and experiments."""

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh import TriangleMesh


def box_mesh(extents=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Axis-aligned box with one corner at ``origin``, 8 vertices and 12 outward faces."""
    ex, ey, ez = extents
    ox, oy, oz = origin
    v = np.array([[ox + i * ex, oy + j * ey, oz + k * ez] for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    # vertex index = 4i + 2j + k
    faces = [
        (0, 1, 3), (0, 3, 2),  # x = 0
        (4, 6, 7), (4, 7, 5),  # x = 1
        (0, 4, 5), (0, 5, 1),  # y = 0
        (2, 3, 7), (2, 7, 6),  # y = 1
        (0, 2, 6), (0, 6, 4),  # z = 0
        (1, 5, 7), (1, 7, 3),  # z = 1
    ]
    return TriangleMesh(v, faces)


def unit_cube():
    return box_mesh((1.0, 1.0, 1.0))


def corner_tetrahedron():
    """Tetrahedron on the origin and the three unit axis points (volume 1/6)."""
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    return TriangleMesh(v, [(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)])


def regular_tetrahedron(edge=1.0):
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= edge / (2 * np.sqrt(2))
    return TriangleMesh(v, [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)])


def icosphere(subdivisions=3, radius=1.0):
    """Geodesic sphere from a subdivided icosahedron, vertices on the sphere."""
    t = (1 + np.sqrt(5)) / 2
    verts = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
             [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
             [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(radius * np.array(verts), faces)


def ellipsoid(semi_axes, subdivisions=4, rotation=None, center=(0.0, 0.0, 0.0)):
    """Ellipsoid mesh obtained by stretching an icosphere; optional 3x3 rotation."""
    sphere = icosphere(subdivisions)
    v = sphere.vertices * np.asarray(semi_axes, dtype=float)
    if rotation is not None:
        v = v @ np.asarray(rotation, dtype=float).T
    return TriangleMesh(v + np.asarray(center, dtype=float), sphere.faces)


def random_rotation(rng):
    """Uniformly random rotation matrix drawn from a numpy Generator."""
    return Rotation.random(random_state=rng).as_matrix()


def ellipsoid_surface_points(n, semi_axes, rng):
    """``n`` points on an ellipsoid surface (directions uniform on the sphere)."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * np.asarray(semi_axes, dtype=float)
