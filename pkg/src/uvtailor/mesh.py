"""Indexed triangle meshes: OBJ I/O, topology queries, vertex attributes, seam cutting.

A :class:`Mesh` is immutable after construction and validates its own
invariants (index ranges, non-degenerate faces, edge-manifoldness).
Cutting a mesh along seam edges produces :class:`Chart` patches whose
faces partition the input faces exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    """Invalid mesh data or an operation's precondition was violated."""


class NonManifoldError(MeshError):
    """An undirected edge is shared by more than two faces."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with counter-clockwise outward-oriented faces.

    vertices : (N, 3) float64 positions in model units
    faces    : (M, 3) int64 vertex indices, three distinct indices per face
    uvs      : optional (K, 2) float64 texture coordinates
    face_uvs : optional (M, 3) int64 per-corner indices into ``uvs``
    """

    vertices: np.ndarray
    faces: np.ndarray
    uvs: np.ndarray | None = None
    face_uvs: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError(
                f"face index out of range: max {f.max() if f.size else 0} for {len(v)} vertices"
            )
        degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
        if degen.any():
            raise MeshError(f"degenerate face (repeated vertex index) at face {int(np.where(degen)[0][0])}")
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "faces", _freeze(f))
        if self.uvs is not None:
            uv = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
            fuv = np.asarray(self.face_uvs, dtype=np.int64).reshape(-1, 3)
            if len(fuv) != len(f):
                raise MeshError("face_uvs must have one row per face")
            if fuv.size and (fuv.min() < 0 or fuv.max() >= len(uv)):
                raise MeshError("face_uv index out of range")
            object.__setattr__(self, "uvs", _freeze(uv))
            object.__setattr__(self, "face_uvs", _freeze(fuv))
        _check_manifold(f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def has_uvs(self) -> bool:
        return self.uvs is not None


@dataclass(frozen=True)
class VertexAttributes:
    """Per-vertex normal, valence and angle-defect curvature."""

    normals: np.ndarray    # (N, 3) unit vectors
    degrees: np.ndarray    # (N,) int, number of incident undirected edges
    curvature: np.ndarray  # (N,) radians of angle defect


@dataclass(frozen=True)
class Chart:
    """A connected cut-out patch of a source mesh.

    ``vertex_source[i]`` is the source-mesh vertex that chart vertex ``i``
    was copied from (several chart vertices may share one source on a seam);
    ``face_source[j]`` is the source face of chart face ``j``.  ``boundary``
    holds the ordered boundary loops as cycles of chart vertex indices.
    """

    vertices: np.ndarray
    faces: np.ndarray
    vertex_source: np.ndarray
    face_source: np.ndarray
    boundary: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "vertices", _freeze(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)))
        object.__setattr__(self, "faces", _freeze(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)))
        object.__setattr__(self, "vertex_source", _freeze(np.asarray(self.vertex_source, dtype=np.int64)))
        object.__setattr__(self, "face_source", _freeze(np.asarray(self.face_source, dtype=np.int64)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_disk(self) -> bool:
        n_e = len(undirected_edges(self.faces))
        euler = self.n_vertices - n_e + self.n_faces
        return len(self.boundary) == 1 and euler == 1


def undirected_edges(faces: np.ndarray) -> np.ndarray:
    """Unique undirected edges as an (E, 2) array with min index first."""
    f = np.asarray(faces)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def edge_face_counts(faces: np.ndarray) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in np.asarray(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(min(u, v)), int(max(u, v)))
            counts[key] = counts.get(key, 0) + 1
    return counts


def _check_manifold(faces: np.ndarray) -> None:
    for edge, count in edge_face_counts(faces).items():
        if count > 2:
            raise NonManifoldError(f"edge {edge} is shared by {count} faces")


def boundary_loops(faces: np.ndarray) -> list[list[int]]:
    """Ordered boundary cycles; each follows the surface's CCW orientation.

    A directed half-edge (a, b) is boundary when its twin (b, a) belongs to
    no face.  On manifold patches every boundary vertex has one outgoing
    boundary half-edge; ties from pinched vertices break to the smallest
    target index.
    """
    f = np.asarray(faces)
    halfedges = set()
    for a, b, c in f:
        halfedges.update(((int(a), int(b)), (int(b), int(c)), (int(c), int(a))))
    boundary = [(a, b) for (a, b) in halfedges if (b, a) not in halfedges]
    outgoing: dict[int, list[int]] = {}
    for a, b in boundary:
        outgoing.setdefault(a, []).append(b)
    for targets in outgoing.values():
        targets.sort()
    loops = []
    unused = set(boundary)
    while unused:
        start = min(unused)
        loop = [start[0]]
        cur = start
        while True:
            unused.discard(cur)
            nxt_v = cur[1]
            if nxt_v == loop[0]:
                break
            loop.append(nxt_v)
            candidates = [t for t in outgoing.get(nxt_v, []) if (nxt_v, t) in unused]
            if not candidates:
                raise MeshError(f"open boundary chain at vertex {nxt_v}")
            cur = (nxt_v, candidates[0])
        loops.append(loop)
    return loops


def corner_angles(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """(M, 3) interior angle at each face corner, in radians."""
    v = np.asarray(vertices)
    f = np.asarray(faces)
    p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    angles = np.empty((len(f), 3))
    for i, (a, b, c) in enumerate(((p0, p1, p2), (p1, p2, p0), (p2, p0, p1))):
        u, w = b - a, c - a
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        dot = np.einsum("ij,ij->i", u, w)
        angles[:, i] = np.arctan2(cross, dot)
    return angles


def face_normals_areas(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit face normals and face areas; zero-area faces get a zero normal."""
    v = np.asarray(vertices)
    f = np.asarray(faces)
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norms = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norms
    normals = np.zeros_like(cross)
    ok = norms > 1e-300
    normals[ok] = cross[ok] / norms[ok, None]
    return normals, areas


def triangle_local_frames(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-face orthonormal tangent-frame coordinates of the three corners.

    Returns (coords, areas) where coords[f] = [[0,0],[x1,0],[x2,y2]] are the
    corner positions in the face plane (y2 > 0 for a non-degenerate face)
    and areas are the 3D face areas.
    """
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces)
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    x1 = np.linalg.norm(e1, axis=1)
    bad = x1 < 1e-300
    if bad.any():
        raise MeshError(f"degenerate 3D face {int(np.where(bad)[0][0])} (zero-length edge)")
    t1 = e1 / x1[:, None]
    n = np.cross(e1, e2)
    nn = np.linalg.norm(n, axis=1)
    bad = nn < 1e-300
    if bad.any():
        raise MeshError(f"degenerate 3D face {int(np.where(bad)[0][0])} (zero area)")
    n = n / nn[:, None]
    t2 = np.cross(n, t1)
    x2 = np.einsum("ij,ij->i", e2, t1)
    y2 = np.einsum("ij,ij->i", e2, t2)
    coords = np.zeros((len(f), 3, 2))
    coords[:, 1, 0] = x1
    coords[:, 2, 0] = x2
    coords[:, 2, 1] = y2
    return coords, 0.5 * nn


def compute_attributes(mesh: Mesh) -> VertexAttributes:
    """Area-weighted normals, valence, and angle-defect curvature.

    Curvature is the discrete Gaussian curvature: 2*pi minus the incident
    angle sum at interior vertices, pi minus the angle sum on the boundary.
    Zero-area faces contribute nothing to the normals.
    """
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    fnormals, fareas = face_normals_areas(v, f)

    normals = np.zeros((n, 3))
    weighted = fnormals * fareas[:, None]
    for k in range(3):
        np.add.at(normals, f[:, k], weighted)
    lengths = np.linalg.norm(normals, axis=1)
    degenerate = lengths < 1e-12
    if degenerate.any():
        normals[degenerate] = (0.0, 0.0, 1.0)
        lengths[degenerate] = 1.0
    normals /= lengths[:, None]

    edges = undirected_edges(f)
    degrees = np.zeros(n, dtype=np.int64)
    np.add.at(degrees, edges[:, 0], 1)
    np.add.at(degrees, edges[:, 1], 1)

    angle_sum = np.zeros(n)
    angles = corner_angles(v, f)
    for k in range(3):
        np.add.at(angle_sum, f[:, k], angles[:, k])
    on_boundary = np.zeros(n, dtype=bool)
    for (a, b), count in edge_face_counts(f).items():
        if count == 1:
            on_boundary[a] = True
            on_boundary[b] = True
    curvature = np.where(on_boundary, np.pi - angle_sum, 2.0 * np.pi - angle_sum)
    return VertexAttributes(_freeze(normals), _freeze(degrees), _freeze(curvature))


# ---------------------------------------------------------------------------
# Seam cutting


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _seam_edge_set(seams) -> set[tuple[int, int]]:
    segments = getattr(seams, "segments", seams)
    return {(int(min(a, b)), int(max(a, b))) for a, b in segments}


def cut_along_seams(mesh: Mesh, seams) -> list[Chart]:
    """Cut the mesh open along seam edges and split into connected charts.

    Vertices along seams are duplicated so that seam edges become chart
    boundary; the charts' faces partition the mesh faces bijectively.
    ``seams`` is a SeamSet or any iterable of (vertex, vertex) pairs.

    Raises MeshError when a seam segment is not a mesh edge, when a seam
    edge cannot open (an isolated one-edge slit whose endpoints both keep a
    single copy), or when a resulting chart is closed (no boundary at all,
    which no downstream parameterization can handle).
    """
    seam_edges = _seam_edge_set(seams)
    f = mesh.faces
    counts = edge_face_counts(f)
    missing = [e for e in sorted(seam_edges) if e not in counts]
    if missing:
        raise MeshError(f"seam segments are not mesh edges: {missing[:8]}")

    # Incident faces per vertex, and per-vertex face gluing across
    # non-seam interior edges.  Each gluing component becomes one copy.
    edge_faces: dict[tuple[int, int], list[int]] = {}
    vertex_faces: dict[int, list[int]] = {}
    for fi, (a, b, c) in enumerate(f):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(min(u, v)), int(max(u, v)))
            edge_faces.setdefault(key, []).append(fi)
        for u in (a, b, c):
            vertex_faces.setdefault(int(u), []).append(fi)

    new_faces = np.empty_like(f)
    n_new = 0
    new_source: list[int] = []
    for v in range(mesh.n_vertices):
        incident = vertex_faces.get(v, [])
        if not incident:
            continue  # unreferenced vertices are dropped by cutting
        local = {fi: i for i, fi in enumerate(incident)}
        uf = _UnionFind(len(incident))
        for fi in incident:
            for a, b, c in (f[fi],):
                for u, w in ((a, b), (b, c), (c, a)):
                    if v not in (u, w):
                        continue
                    key = (int(min(u, w)), int(max(u, w)))
                    if key in seam_edges:
                        continue
                    for other in edge_faces[key]:
                        if other != fi and other in local:
                            uf.union(local[fi], local[other])
        roots: dict[int, int] = {}
        for fi in incident:
            r = uf.find(local[fi])
            if r not in roots:
                roots[r] = n_new
                new_source.append(v)
                n_new += 1
            corner = int(np.where(f[fi] == v)[0][0])
            new_faces[fi, corner] = roots[r]

    # Every seam edge must now lie on a boundary (single incident face).
    new_counts = edge_face_counts(new_faces)
    src = np.asarray(new_source)
    for (a, b), count in new_counts.items():
        if count > 1 and (int(min(src[a], src[b])), int(max(src[a], src[b]))) in seam_edges:
            raise MeshError(
                f"seam edge {(int(src[a]), int(src[b]))} cannot open: an isolated "
                "single-edge slit needs a neighboring seam or boundary to separate"
            )

    # Connected components of faces over shared (new) edges.
    uf = _UnionFind(len(f))
    new_edge_faces: dict[tuple[int, int], int] = {}
    for fi, (a, b, c) in enumerate(new_faces):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(min(u, v)), int(max(u, v)))
            if key in new_edge_faces:
                uf.union(fi, new_edge_faces[key])
            else:
                new_edge_faces[key] = fi
    groups: dict[int, list[int]] = {}
    for fi in range(len(f)):
        groups.setdefault(uf.find(fi), []).append(fi)

    charts = []
    for root in sorted(groups):
        face_ids = groups[root]
        sub = new_faces[face_ids]
        used = np.unique(sub)
        remap = {int(old): i for i, old in enumerate(used)}
        chart_faces = np.vectorize(remap.__getitem__)(sub)
        vertex_source = src[used]
        loops = boundary_loops(chart_faces)
        if not loops:
            raise MeshError(
                "cutting produced a closed chart (no boundary); supply seams that "
                "open every closed surface component"
            )
        chart = Chart(
            vertices=mesh.vertices[vertex_source],
            faces=chart_faces,
            vertex_source=vertex_source,
            face_source=np.asarray(face_ids, dtype=np.int64),
            boundary=tuple(tuple(loop) for loop in loops),
        )
        if chart.n_faces == 0:
            raise MeshError("cutting produced a chart with zero faces")
        charts.append(chart)
    return charts


def chart_as_mesh(chart: Chart) -> Mesh:
    return Mesh(vertices=chart.vertices, faces=chart.faces)


# ---------------------------------------------------------------------------
# Wavefront OBJ I/O


def load_obj(path) -> Mesh:
    """Read a Wavefront OBJ; polygons are fan-triangulated from their first corner.

    Keeps v/vt records when present, compacts unreferenced vertices, and
    rejects non-manifold connectivity (the error names the offending edge
    with 1-based indices as written in the file).
    """
    path = Path(path)
    if not path.exists():
        raise MeshError(f"no such file: {path}")
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[list[int]] = []
    face_uvs: list[list[int]] = []
    any_corner_uv = False

    def resolve(idx: str, count: int) -> int:
        i = int(idx)
        if i < 0:
            i = count + i + 1
        if i < 1 or i > count:
            raise MeshError(f"face index {idx} out of range in {path.name}")
        return i - 1

    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif tag == "f":
                corners = []
                corner_uvs = []
                for item in parts[1:]:
                    fields = item.split("/")
                    corners.append(resolve(fields[0], len(verts)))
                    if len(fields) > 1 and fields[1]:
                        corner_uvs.append(resolve(fields[1], len(uvs)))
                        any_corner_uv = True
                    else:
                        corner_uvs.append(-1)
                for k in range(1, len(corners) - 1):
                    faces.append([corners[0], corners[k], corners[k + 1]])
                    face_uvs.append([corner_uvs[0], corner_uvs[k], corner_uvs[k + 1]])
    if not faces:
        raise MeshError(f"no faces in {path.name}")

    f = np.asarray(faces, dtype=np.int64)
    try:
        _check_manifold(f)
    except NonManifoldError as exc:
        # report with the file's 1-based vertex numbering
        edge = exc.args[0]
        raise NonManifoldError(f"{path.name}: non-manifold {_shift_edge_message(edge)}") from None

    used = np.unique(f)
    vmap = np.full(len(verts), -1, dtype=np.int64)
    vmap[used] = np.arange(len(used))
    v = np.asarray(verts, dtype=np.float64)[used]
    f = vmap[f]

    uv_arr = fuv_arr = None
    if any_corner_uv and uvs:
        fuv = np.asarray(face_uvs, dtype=np.int64)
        if (fuv < 0).any():
            raise MeshError(f"{path.name}: some faces carry vt indices and others do not")
        used_uv = np.unique(fuv)
        uvmap = np.full(len(uvs), -1, dtype=np.int64)
        uvmap[used_uv] = np.arange(len(used_uv))
        uv_arr = np.asarray(uvs, dtype=np.float64)[used_uv]
        fuv_arr = uvmap[fuv]

    mesh = Mesh(vertices=v, faces=f, uvs=uv_arr, face_uvs=fuv_arr)
    logger.info("loaded %s: %d vertices, %d faces%s", path.name, mesh.n_vertices,
                mesh.n_faces, ", with UVs" if mesh.has_uvs() else "")
    return mesh


def _shift_edge_message(message: str) -> str:
    # NonManifoldError carries 0-based indices; shift for the OBJ report.
    import re

    def repl(m):
        return f"edge ({int(m.group(1)) + 1}, {int(m.group(2)) + 1})"

    return re.sub(r"edge \((\d+), (\d+)\)", repl, message)


def save_obj(path, mesh: Mesh) -> None:
    """Write v / vt / f records with at least 9 significant digits."""
    path = Path(path)
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    if mesh.has_uvs():
        for u, v in mesh.uvs:
            lines.append(f"vt {u:.9g} {v:.9g}")
        for (a, b, c), (ta, tb, tc) in zip(mesh.faces, mesh.face_uvs):
            lines.append(f"f {a + 1}/{ta + 1} {b + 1}/{tb + 1} {c + 1}/{tc + 1}")
    else:
        for a, b, c in mesh.faces:
            lines.append(f"f {a + 1} {b + 1} {c + 1}")
    path.write_text("\n".join(lines) + "\n")
