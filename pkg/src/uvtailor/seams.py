"""Seam representation and the quantized 6-token segment codec.

A seam is a set of mesh edges.  Raw 3D polylines are snapped onto the
mesh by nearest-vertex projection plus shortest edge paths.  The token
format packs each segment into six integers: the quantized (x, y, z) of
both endpoints, normalized against the mesh bounding box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .mesh import Mesh, MeshError, undirected_edges

SOS = "SOS"
EOS = "EOS"


class SeamError(ValueError):
    """Invalid seam data or token framing."""


def _canonical(segments) -> tuple[tuple[int, int], ...]:
    seen = set()
    for a, b in segments:
        a, b = int(a), int(b)
        if a == b:
            raise SeamError(f"degenerate seam segment ({a}, {b})")
        seen.add((min(a, b), max(a, b)))
    return tuple(sorted(seen))


@dataclass(frozen=True)
class SeamSet:
    """Undirected mesh-edge segments, canonically sorted and deduplicated."""

    segments: tuple[tuple[int, int], ...]
    mesh_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "segments", _canonical(self.segments))

    def validate_on_mesh(self, mesh: Mesh) -> None:
        edges = {(int(a), int(b)) for a, b in undirected_edges(mesh.faces)}
        missing = [s for s in self.segments if s not in edges]
        if missing:
            raise SeamError(f"seam segments are not mesh edges: {missing[:8]}")

    def __len__(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class TokenSeq:
    """Quantized seam tokens: six per segment, framed by SOS/EOS flags.

    The payload excludes the framing markers, which are out-of-band so the
    whole [0, 2^bits - 1] integer range stays usable for coordinates.
    """

    tokens: tuple[int, ...]
    bits: int
    bbox_min: np.ndarray
    bbox_extent: np.ndarray
    sos: bool = True
    eos: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "bbox_min", np.asarray(self.bbox_min, dtype=np.float64).reshape(3))
        object.__setattr__(self, "bbox_extent", np.asarray(self.bbox_extent, dtype=np.float64).reshape(3))
        if len(self.tokens) % 6 != 0:
            raise SeamError(f"payload length {len(self.tokens)} is not a multiple of 6")
        top = (1 << self.bits) - 1
        for t in self.tokens:
            if t < 0 or t > top:
                raise SeamError(f"token {t} outside [0, {top}]")


def _nearest_vertices(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Nearest mesh vertex per query point; exact ties go to the lower index."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if mesh.n_vertices == 0:
        raise SeamError("mesh has no vertices")
    d2 = ((pts[:, None, :] - mesh.vertices[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)  # argmin returns the first (lowest) index on ties


def _edge_graph(mesh: Mesh) -> csr_matrix:
    e = undirected_edges(mesh.faces)
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))


def _shortest_edge_path(graph: csr_matrix, src: int, dst: int) -> list[int]:
    _, pred = dijkstra(graph, indices=src, return_predecessors=True)
    if pred[dst] < 0 and src != dst:
        raise SeamError(f"vertices {src} and {dst} are not edge-connected")
    path = [dst]
    while path[-1] != src:
        path.append(int(pred[path[-1]]))
    return path[::-1]


def snap_polyline(mesh: Mesh, polyline) -> SeamSet:
    """Project a 3D polyline onto mesh edges.

    Each point snaps to its nearest vertex; consecutive distinct snaps are
    joined by the shortest edge path (Dijkstra, Euclidean weights).
    """
    pts = np.asarray(polyline, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        raise SeamError("polyline needs at least 2 points")
    snapped = _nearest_vertices(mesh, pts)
    chain = [int(snapped[0])]
    for v in snapped[1:]:
        if int(v) != chain[-1]:
            chain.append(int(v))
    graph = _edge_graph(mesh)
    segments = []
    for a, b in zip(chain, chain[1:]):
        path = _shortest_edge_path(graph, a, b)
        segments.extend(zip(path, path[1:]))
    return SeamSet(segments=tuple(segments))


def _quantize(points: np.ndarray, bbox_min: np.ndarray, extent: np.ndarray, bits: int) -> np.ndarray:
    top = (1 << bits) - 1
    safe = np.where(extent > 0, extent, 1.0)
    q = np.rint((points - bbox_min) / safe * top)
    q[:, extent <= 0] = 0
    return np.clip(q, 0, top).astype(np.int64)


def _dequantize(tokens: np.ndarray, bbox_min: np.ndarray, extent: np.ndarray, bits: int) -> np.ndarray:
    # center-of-bin convention halves the worst-case round-trip error
    return bbox_min + (tokens + 0.5) / float(1 << bits) * extent


def encode(seams: SeamSet, mesh: Mesh, bits: int = 10) -> TokenSeq:
    """Encode seam segments as sorted 6-token groups.

    Endpoints are quantized against the mesh bounding box; within a segment
    the lexicographically smaller quantized triple comes first, and
    segments are sorted by their 6-tuple, so the encoding is canonical in
    segment and endpoint order.
    """
    if not 4 <= bits <= 16:
        raise SeamError(f"bits must be in [4, 16], got {bits}")
    seams.validate_on_mesh(mesh)
    bbox_min = mesh.vertices.min(axis=0)
    extent = mesh.vertices.max(axis=0) - bbox_min
    groups = []
    for a, b in seams.segments:
        qa, qb = _quantize(mesh.vertices[[a, b]], bbox_min, extent, bits)
        ta, tb = tuple(qa), tuple(qb)
        groups.append(ta + tb if ta <= tb else tb + ta)
    groups.sort()
    payload = tuple(t for g in groups for t in g)
    return TokenSeq(tokens=payload, bits=bits, bbox_min=bbox_min, bbox_extent=extent)


def decode(tokens: TokenSeq, mesh: Mesh) -> SeamSet:
    """Project token groups back onto the mesh.

    Dequantized endpoints go through nearest-vertex projection, then each
    pair is joined by the shortest edge path, as in :func:`snap_polyline`.
    """
    payload = np.asarray(tokens.tokens, dtype=np.int64).reshape(-1, 6)
    if payload.size == 0:
        return SeamSet(segments=())
    pts = _dequantize(payload.reshape(-1, 3).astype(np.float64), tokens.bbox_min,
                      tokens.bbox_extent, tokens.bits)
    snapped = _nearest_vertices(mesh, pts).reshape(-1, 2)
    graph = _edge_graph(mesh)
    segments = []
    for a, b in snapped:
        a, b = int(a), int(b)
        if a == b:
            continue  # quantization merged the endpoints
        path = _shortest_edge_path(graph, a, b)
        segments.extend(zip(path, path[1:]))
    return SeamSet(segments=tuple(segments))


# ---------------------------------------------------------------------------
# File formats


def save_seams(path, seams: SeamSet) -> None:
    data = {"segments": [list(s) for s in seams.segments]}
    Path(path).write_text(json.dumps(data, sort_keys=True) + "\n")


def load_seams(path, mesh: Mesh | None = None) -> SeamSet:
    """Read a seam file: {"segments": [[a, b], ...]} with vertex indices,
    or {"polylines": [[[x,y,z], ...], ...]} which requires a mesh to snap onto."""
    data = json.loads(Path(path).read_text())
    if "segments" in data:
        return SeamSet(segments=tuple((int(a), int(b)) for a, b in data["segments"]))
    if "polylines" in data:
        if mesh is None:
            raise SeamError("polyline seam file needs a mesh to snap onto")
        segments: list[tuple[int, int]] = []
        for line in data["polylines"]:
            segments.extend(snap_polyline(mesh, line).segments)
        return SeamSet(segments=tuple(segments))
    raise SeamError(f"{path}: expected 'segments' or 'polylines' key")


def save_tokens(path, tokens: TokenSeq) -> None:
    data = {
        "bits": tokens.bits,
        "bbox": {"min": list(tokens.bbox_min), "extent": list(tokens.bbox_extent)},
        "tokens": list(tokens.tokens),
        "framing": {"sos": tokens.sos, "eos": tokens.eos},
    }
    Path(path).write_text(json.dumps(data, sort_keys=True) + "\n")


def load_tokens(path) -> TokenSeq:
    data = json.loads(Path(path).read_text())
    framing = data.get("framing", {})
    return TokenSeq(
        tokens=tuple(data["tokens"]),
        bits=int(data["bits"]),
        bbox_min=np.asarray(data["bbox"]["min"], dtype=np.float64),
        bbox_extent=np.asarray(data["bbox"]["extent"], dtype=np.float64),
        sos=bool(framing.get("sos", True)),
        eos=bool(framing.get("eos", True)),
    )
