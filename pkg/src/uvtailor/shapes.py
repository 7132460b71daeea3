"""Canonical meshes used by the pipeline's fixtures, demos and synthetic data."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def _fan(quads: list[tuple[int, int, int, int]]) -> list[tuple[int, int, int]]:
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return tris


def cube(size: float = 1.0) -> Mesh:
    """Axis-aligned cube on [0, size]^3; corner index = x + 2y + 4z bits.

    8 vertices, 12 triangles, CCW outward orientation.
    """
    corners = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float)
    quads = [
        (0, 2, 3, 1),  # bottom  z=0
        (4, 5, 7, 6),  # top     z=1
        (0, 1, 5, 4),  # front   y=0
        (2, 6, 7, 3),  # back    y=1
        (0, 4, 6, 2),  # left    x=0
        (1, 3, 7, 5),  # right   x=1
    ]
    return Mesh(vertices=corners * size, faces=_fan(quads))


def cube_cross_seams() -> list[tuple[int, int]]:
    """The 7-edge spanning-tree cut that unfolds :func:`cube` into a cross.

    Folds kept: bottom-to-sides and front-to-top.  Cutting these edges
    yields one disk chart with 14 boundary vertices.
    """
    return [(0, 4), (1, 5), (2, 6), (3, 7), (4, 6), (6, 7), (5, 7)]


def octahedron(radius: float = 1.0) -> Mesh:
    v = np.array([
        [1, 0, 0], [-1, 0, 0],
        [0, 1, 0], [0, -1, 0],
        [0, 0, 1], [0, 0, -1],
    ], dtype=float) * radius
    f = [
        (0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4),
        (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5),
    ]
    return Mesh(vertices=v, faces=f)


def octahedron_tree_seams() -> list[tuple[int, int]]:
    """A 5-edge spanning tree of the octahedron vertex graph."""
    return [(0, 2), (2, 1), (1, 3), (0, 4), (0, 5)]


def icosahedron(radius: float = 1.0) -> Mesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    raw = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            raw.extend([(0, a, b), (a, b, 0), (b, 0, a)])
    v = np.asarray(raw, dtype=float)
    v *= radius / np.linalg.norm(v[0])
    # faces from the convex hull, re-oriented outward
    from scipy.spatial import ConvexHull

    hull = ConvexHull(v)
    faces = []
    for simplex in hull.simplices:
        a, b, c = simplex
        n = np.cross(v[b] - v[a], v[c] - v[a])
        centroid = (v[a] + v[b] + v[c]) / 3.0
        faces.append((a, b, c) if np.dot(n, centroid) > 0 else (a, c, b))
    faces.sort()
    return Mesh(vertices=v, faces=faces)


def uv_sphere(n_around: int = 12, n_rings: int = 7, radius: float = 1.0) -> Mesh:
    """Closed sphere: two poles plus (n_rings - 1) latitude rings."""
    verts = [(0.0, 0.0, radius)]
    for r in range(1, n_rings):
        theta = np.pi * r / n_rings
        for k in range(n_around):
            phi = 2.0 * np.pi * k / n_around
            verts.append((radius * np.sin(theta) * np.cos(phi),
                          radius * np.sin(theta) * np.sin(phi),
                          radius * np.cos(theta)))
    verts.append((0.0, 0.0, -radius))
    south = len(verts) - 1

    def ring(r: int, k: int) -> int:
        return 1 + (r - 1) * n_around + (k % n_around)

    faces = []
    for k in range(n_around):
        faces.append((0, ring(1, k), ring(1, k + 1)))
    for r in range(1, n_rings - 1):
        for k in range(n_around):
            a, b = ring(r, k), ring(r, k + 1)
            c, d = ring(r + 1, k), ring(r + 1, k + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    for k in range(n_around):
        faces.append((south, ring(n_rings - 1, k + 1), ring(n_rings - 1, k)))
    return Mesh(vertices=np.asarray(verts), faces=faces)


def hemisphere(n_around: int = 12, n_rings: int = 4, radius: float = 1.0) -> Mesh:
    """Open top half of a sphere; the equator ring is the boundary."""
    verts = [(0.0, 0.0, radius)]
    for r in range(1, n_rings + 1):
        theta = 0.5 * np.pi * r / n_rings
        for k in range(n_around):
            phi = 2.0 * np.pi * k / n_around
            verts.append((radius * np.sin(theta) * np.cos(phi),
                          radius * np.sin(theta) * np.sin(phi),
                          radius * np.cos(theta)))

    def ring(r: int, k: int) -> int:
        return 1 + (r - 1) * n_around + (k % n_around)

    faces = []
    for k in range(n_around):
        faces.append((0, ring(1, k), ring(1, k + 1)))
    for r in range(1, n_rings):
        for k in range(n_around):
            a, b = ring(r, k), ring(r, k + 1)
            c, d = ring(r + 1, k), ring(r + 1, k + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    return Mesh(vertices=np.asarray(verts), faces=faces)


def open_cylinder(n_around: int = 16, n_height: int = 8,
                  radius: float = 1.0, height: float = 2.0) -> Mesh:
    """Cylinder wall cut open along one generatrix (disk topology).

    The seam column is duplicated: (n_around + 1) columns x (n_height + 1)
    rows of vertices, 2 * n_around * n_height triangles.
    """
    cols, rows = n_around + 1, n_height + 1
    verts = np.empty((cols * rows, 3))
    for i in range(cols):
        theta = 2.0 * np.pi * i / n_around
        for j in range(rows):
            verts[i * rows + j] = (radius * np.cos(theta),
                                   radius * np.sin(theta),
                                   height * j / n_height)
    faces = []
    for i in range(n_around):
        for j in range(n_height):
            a = i * rows + j
            b = (i + 1) * rows + j
            faces.append((a, b, b + 1))
            faces.append((a, b + 1, a + 1))
    return Mesh(vertices=verts, faces=faces)


def cylinder_unrolled_uv(n_around: int = 16, n_height: int = 8,
                         radius: float = 1.0, height: float = 2.0) -> np.ndarray:
    """Analytic isometric unrolling of :func:`open_cylinder` (arc length, z)."""
    cols, rows = n_around + 1, n_height + 1
    uv = np.empty((cols * rows, 2))
    for i in range(cols):
        for j in range(rows):
            uv[i * rows + j] = (radius * 2.0 * np.pi * i / n_around,
                                height * j / n_height)
    return uv


def grid_mesh(nx: int = 8, ny: int | None = None, extent: float = 1.0) -> Mesh:
    """Planar grid in the z=0 plane with nx x ny vertices."""
    ny = nx if ny is None else ny
    xs = np.linspace(0.0, extent, nx)
    ys = np.linspace(0.0, extent, ny)
    verts = np.array([(x, y, 0.0) for j, y in enumerate(ys) for i, x in enumerate(xs)])
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            faces.append((a, b, d))
            faces.append((a, d, c))
    return Mesh(vertices=verts, faces=faces)


def hexagon_fan() -> Mesh:
    """Regular hexagon fan: 6 rim vertices around one interior vertex."""
    angles = np.arange(6) * np.pi / 3.0
    rim = np.stack([np.cos(angles), np.sin(angles), np.zeros(6)], axis=1)
    verts = np.vstack([rim, [[0.0, 0.0, 0.0]]])
    faces = [(k, (k + 1) % 6, 6) for k in range(6)]
    return Mesh(vertices=verts, faces=faces)


def two_triangle_square() -> Mesh:
    verts = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (1.0, 1.0, 0.0), (0.0, 1.0, 0.0)]
    return Mesh(vertices=np.asarray(verts), faces=[(0, 1, 2), (0, 2, 3)])
