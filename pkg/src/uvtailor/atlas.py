"""Atlas layout: island orientation, shelf packing, and quality metrics.

Islands are rotated to their minimum-area bounding box, rescaled so the
uv-to-3D area ratio is shared across islands, and shelf-packed into the
unit square with a binary-searched global scale.  Metrics report the
scale-normalized conformal distortion, utilization, the fraction of
flipped or pairwise-intersecting faces, and the island count.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import conformal_distortion_metric
from .mesh import Chart, Mesh, MeshError, face_normals_areas
from .unwrap import UvChart, UvError, uv_signed_areas

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 4.0 / 1024.0  # four texels of padding at a 1K texture


class AtlasError(ValueError):
    pass


@dataclass(frozen=True)
class PlacedIsland:
    """An island's final placement: 90-degree-step rotation, uniform scale,
    translation, and the resulting uv coordinates inside the atlas."""

    source: UvChart
    rotated: bool
    scale: float
    translation: np.ndarray
    uv: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "uv", np.asarray(self.uv, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))


@dataclass
class UvAtlas:
    islands: list[PlacedIsland]
    margin: float
    global_scale: float

    @property
    def fragments(self) -> int:
        return len(self.islands)


@dataclass
class MetricsReport:
    distortion: float
    utilization: float
    utilization_padded: float
    overlap_pct: float
    fragments: int
    runtime_s: dict[str, float] = field(default_factory=dict)

    def to_json(self, include_timings: bool = False) -> str:
        """Timings are excluded by default so reports stay byte-reproducible."""
        data = {
            "distortion": self.distortion,
            "utilization": self.utilization,
            "utilization_padded": self.utilization_padded,
            "overlap_pct": self.overlap_pct,
            "fragments": self.fragments,
        }
        if include_timings:
            data["runtime_s"] = dict(sorted(self.runtime_s.items()))
        return json.dumps(data, sort_keys=True)

    def table(self) -> str:
        rows = [
            ("distortion", f"{self.distortion:.6f}"),
            ("utilization", f"{100.0 * self.utilization:.2f} %"),
            ("utilization (padded)", f"{100.0 * self.utilization_padded:.2f} %"),
            ("overlap", f"{100.0 * self.overlap_pct:.2f} %"),
            ("fragments", str(self.fragments)),
        ]
        rows.extend((f"runtime[{k}]", f"{v:.3f} s") for k, v in sorted(self.runtime_s.items()))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


# ---------------------------------------------------------------------------
# Island orientation


def _rotate(uv: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return uv @ np.array([[c, s], [-s, c]])


def orient_island(uvchart: UvChart) -> UvChart:
    """Rotate to the minimum-area bounding box and translate to the
    positive quadrant.

    The optimal angle is searched over convex hull edge directions
    (a minimal box is flush with a hull edge); collinear islands fall back
    to principal-axis alignment.  Candidate angles are reduced modulo 90
    degrees so an already-axis-aligned island keeps its orientation.
    """
    uv = uvchart.uv
    if len(uv) < 2:
        raise UvError("orient_island needs at least 2 distinct points")
    angles: list[float]
    try:
        from scipy.spatial import ConvexHull, QhullError

        hull = ConvexHull(uv)
        pts = uv[hull.vertices]
        d = np.roll(pts, -1, axis=0) - pts
        angles = sorted({float(np.arctan2(dy, dx)) % (np.pi / 2.0) for dx, dy in d})
    except (QhullError, ValueError):
        centered = uv - uv.mean(axis=0)
        _, vecs = np.linalg.eigh(centered.T @ centered)
        principal = vecs[:, -1]
        angles = [float(np.arctan2(principal[1], principal[0])) % (np.pi / 2.0)]
    best_angle, best_area = 0.0, np.inf
    for a in angles:
        r = _rotate(uv, -a)
        extent = r.max(axis=0) - r.min(axis=0)
        area = float(extent[0] * extent[1])
        if area < best_area - 1e-15:
            best_area, best_angle = area, a
    out = _rotate(uv, -best_angle)
    out = out - out.min(axis=0)
    return UvChart(chart=uvchart.chart, uv=out)


# ---------------------------------------------------------------------------
# Shelf packing


def _island_metrics(island: UvChart) -> tuple[float, float]:
    """(uv area, 3D area) of an island."""
    uv_area = float(np.abs(uv_signed_areas(island.uv, island.chart.faces)).sum())
    _, areas3d = face_normals_areas(island.chart.vertices, island.chart.faces)
    return uv_area, float(areas3d.sum())


def _shelf_layout(dims: np.ndarray, side: float):
    """Greedy shelf packing of w x h boxes into a side x side square.

    Boxes are placed in the given order (callers sort by decreasing
    height).  Returns per-box origins or None when something does not fit.
    """
    eps = 1e-12
    origins = np.empty_like(dims)
    x = y = shelf_h = 0.0
    for i, (w, h) in enumerate(dims):
        if w > side + eps or h > side + eps:
            return None
        if x + w > side + eps:  # start a new shelf
            y += shelf_h
            x, shelf_h = 0.0, 0.0
        if h > shelf_h:
            shelf_h = h
        if y + h > side + eps:
            return None
        origins[i] = (x, y)
        x += w
    return origins


def pack(islands: list[UvChart], margin: float = DEFAULT_MARGIN) -> UvAtlas:
    """Pack oriented islands into [0,1]^2 with a shared texel density.

    Each island is first rescaled so uv area equals its 3D area, making
    (uv area / 3D area) identical across islands; one global factor is
    then binary-searched (32 iterations) to the largest value for which
    the decreasing-height shelf layout fits.  Bounding boxes inflated by
    margin/2 stay pairwise disjoint.
    """
    if not islands:
        raise AtlasError("no islands to pack")
    base_uv = []
    base_dims = []
    turned = []
    for island in islands:
        uv_area, area3d = _island_metrics(island)
        if uv_area <= 0 or area3d <= 0:
            raise AtlasError("island with zero uv or 3D area")
        uv = island.uv - island.uv.min(axis=0)
        uv = uv * np.sqrt(area3d / uv_area)
        extent = uv.max(axis=0)
        rotate90 = bool(extent[1] > extent[0])
        if rotate90:  # landscape orientation packs flatter shelves
            uv = np.stack([uv[:, 1], extent[0] - uv[:, 0]], axis=1)
            extent = extent[::-1]
        base_uv.append(uv)
        base_dims.append(extent)
        turned.append(rotate90)
    base_dims = np.asarray(base_dims)

    order = sorted(range(len(islands)),
                   key=lambda i: (-base_dims[i, 1], -base_dims[i, 0], i))
    side = 1.0 + margin

    def layout_at(g: float):
        dims = base_dims[order] * g + margin
        return _shelf_layout(dims, side)

    hi = float(1.0 / base_dims.max())
    best_g, best_layout = None, None
    if (layout := layout_at(hi)) is not None:
        best_g, best_layout = hi, layout
    else:
        lo = 0.0
        for _ in range(32):
            mid = 0.5 * (lo + hi)
            if mid <= 0:
                break
            if (layout := layout_at(mid)) is not None:
                best_g, best_layout, lo = mid, layout, mid
            else:
                hi = mid
    if best_g is None:
        raise AtlasError(
            f"cannot pack {len(islands)} islands with margin {margin}: "
            "padding alone exceeds the atlas")

    placed: list[PlacedIsland | None] = [None] * len(islands)
    for rank, i in enumerate(order):
        origin = best_layout[rank]
        placed[i] = PlacedIsland(
            source=islands[i],
            rotated=turned[i],
            scale=best_g,
            translation=origin,
            uv=base_uv[i] * best_g + origin,
        )
    return UvAtlas(islands=list(placed), margin=margin, global_scale=best_g)


# ---------------------------------------------------------------------------
# Exact triangle overlap


def _triangles_separated(t1: np.ndarray, t2: np.ndarray, eps: float) -> bool:
    for tri in (t1, t2):
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            axis = np.array([a[1] - b[1], b[0] - a[0]])
            p1 = t1 @ axis
            p2 = t2 @ axis
            if p1.max() <= p2.min() + eps or p2.max() <= p1.min() + eps:
                return True
    return False


def triangles_intersect(t1: np.ndarray, t2: np.ndarray, eps: float = 1e-12) -> bool:
    """Positive-area intersection test; shared edges and vertices do not count.

    Degenerate (zero-area) triangles never intersect anything, matching
    the area-based definition of overlap.
    """
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    for tri in (t1, t2):
        area = 0.5 * abs(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
        if area <= eps:
            return False
    return not _triangles_separated(t1, t2, eps)


def intersecting_face_pairs(uv: np.ndarray, faces: np.ndarray,
                            eps: float = 1e-12) -> list[tuple[int, int]]:
    """All face pairs with positive-area uv overlap (bbox sweep prefilter)."""
    tris = uv[faces]
    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    order = np.argsort(lo[:, 0], kind="stable")
    pairs = []
    for oi, i in enumerate(order):
        for j in order[oi + 1:]:
            if lo[j, 0] > hi[i, 0] + eps:
                break
            if lo[j, 1] > hi[i, 1] + eps or hi[j, 1] < lo[i, 1] - eps:
                continue
            if triangles_intersect(tris[i], tris[j], eps):
                pairs.append((min(int(i), int(j)), max(int(i), int(j))))
    return sorted(pairs)


def overlapping_face_fraction(uv: np.ndarray, faces: np.ndarray) -> float:
    """Fraction of faces that are flipped or intersect another face."""
    flipped = uv_signed_areas(uv, faces) < 0
    bad = set(np.where(flipped)[0].tolist())
    for i, j in intersecting_face_pairs(uv, faces):
        bad.add(i)
        bad.add(j)
    return len(bad) / max(len(faces), 1)


# ---------------------------------------------------------------------------
# Metrics


def atlas_face_table(mesh: Mesh, atlas: UvAtlas) -> tuple[np.ndarray, np.ndarray]:
    """Flat (uv, faces) arrays over all islands, indexed against a shared
    uv pool; asserts the islands' face provenance covers the mesh."""
    covered = np.zeros(mesh.n_faces, dtype=bool)
    uv_pool = []
    face_rows = []
    offset = 0
    for island in atlas.islands:
        chart = island.source.chart
        covered[chart.face_source] = True
        uv_pool.append(island.uv)
        face_rows.append(chart.faces + offset)
        offset += chart.n_vertices
    if not covered.all():
        missing = np.where(~covered)[0]
        raise AtlasError(f"atlas does not cover mesh faces {missing[:8].tolist()}"
                         f"{'...' if len(missing) > 8 else ''}")
    return np.concatenate(uv_pool), np.concatenate(face_rows)


def compute_metrics(mesh: Mesh, atlas: UvAtlas,
                    timings: dict[str, float] | None = None) -> MetricsReport:
    """Distortion, utilization, overlap fraction and fragment count.

    Distortion is the area-weighted conformal spread evaluated per island
    on the packed uv with the global scale factored out, so the packing
    transform does not move it.
    """
    total_area3d = 0.0
    weighted = 0.0
    uv_area = 0.0
    padded_area = 0.0
    for island in atlas.islands:
        chart = island.source.chart
        _, areas3d = face_normals_areas(chart.vertices, chart.faces)
        a3 = float(areas3d.sum())
        weighted += conformal_distortion_metric(chart, island.uv) * a3
        total_area3d += a3
        uv_area += float(np.abs(uv_signed_areas(island.uv, chart.faces)).sum())
        extent = island.uv.max(axis=0) - island.uv.min(axis=0)
        padded_area += float((extent[0] + atlas.margin) * (extent[1] + atlas.margin))
    distortion = weighted / max(total_area3d, 1e-300)

    flat_uv, flat_faces = atlas_face_table(mesh, atlas)
    overlap_pct = overlapping_face_fraction(flat_uv, flat_faces)
    return MetricsReport(
        distortion=float(distortion),
        utilization=float(uv_area),
        utilization_padded=float(min(padded_area, 1.0)),
        overlap_pct=float(overlap_pct),
        fragments=atlas.fragments,
        runtime_s=dict(timings or {}),
    )


def metrics_from_uvs(mesh3d: Mesh, uv_mesh: Mesh,
                     timings: dict[str, float] | None = None) -> MetricsReport:
    """Metrics for an externally unwrapped mesh, by face correspondence.

    ``mesh3d`` supplies the geometry, ``uv_mesh`` the vt records; faces
    must correspond one-to-one by order.
    """
    if not uv_mesh.has_uvs():
        raise MeshError("second mesh carries no vt records")
    if mesh3d.n_faces != uv_mesh.n_faces:
        raise MeshError(f"face count mismatch: {mesh3d.n_faces} vs {uv_mesh.n_faces}")
    from .dataprep import split_islands  # face-connectivity in uv space

    corners3d = mesh3d.vertices[mesh3d.faces]          # (M, 3, 3)
    flat_vertices = corners3d.reshape(-1, 3)
    flat_faces = np.arange(mesh3d.n_faces * 3).reshape(-1, 3)
    flat_uv = uv_mesh.uvs[uv_mesh.face_uvs].reshape(-1, 2)

    chart = Chart(vertices=flat_vertices, faces=flat_faces,
                  vertex_source=flat_faces.reshape(-1),
                  face_source=np.arange(mesh3d.n_faces),
                  boundary=((0, 1, 2),))  # boundary unused by the metrics below
    distortion = conformal_distortion_metric(chart, flat_uv)
    overlap_pct = overlapping_face_fraction(uv_mesh.uvs, uv_mesh.face_uvs)
    uv_area = float(np.abs(uv_signed_areas(flat_uv, flat_faces)).sum())
    fragments = len(split_islands(uv_mesh, mesh_id="metrics"))
    return MetricsReport(
        distortion=float(distortion),
        utilization=uv_area,
        utilization_padded=uv_area,
        overlap_pct=float(overlap_pct),
        fragments=fragments,
        runtime_s=dict(timings or {}),
    )


# ---------------------------------------------------------------------------
# Exports


def atlas_to_mesh(mesh: Mesh, atlas: UvAtlas) -> Mesh:
    """Rewrite the source mesh with the packed atlas as vt/f records."""
    uvs = []
    face_uvs = np.empty((mesh.n_faces, 3), dtype=np.int64)
    offset = 0
    for island in atlas.islands:
        chart = island.source.chart
        uvs.append(island.uv)
        face_uvs[chart.face_source] = chart.faces + offset
        offset += chart.n_vertices
    return Mesh(vertices=mesh.vertices, faces=mesh.faces,
                uvs=np.concatenate(uvs), face_uvs=face_uvs)


_PALETTE = np.array([
    (230, 97, 90), (95, 173, 86), (86, 119, 194), (218, 165, 66),
    (142, 104, 184), (84, 183, 178), (199, 109, 162), (158, 158, 74),
])


def atlas_preview_png(atlas: UvAtlas, path, resolution: int = 512) -> None:
    """Flat-colored island rasterization for quick visual inspection."""
    from PIL import Image, ImageDraw

    img = Image.new("RGB", (resolution, resolution), (24, 24, 24))
    draw = ImageDraw.Draw(img)
    for idx, island in enumerate(atlas.islands):
        color = tuple(int(c) for c in _PALETTE[idx % len(_PALETTE)])
        uv = island.uv
        for face in island.source.chart.faces:
            poly = [(float(uv[v, 0]) * resolution,
                     float(resolution - uv[v, 1] * resolution)) for v in face]
            draw.polygon(poly, fill=color)
    img.save(Path(path))
