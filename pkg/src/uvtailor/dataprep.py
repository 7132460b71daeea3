"""Curation of UV-mapped meshes: split into islands, filter, score with SSIM.

Islands are connected components of the face graph where adjacency means
sharing a *uv* edge (same vt pair), so 3D-welded but uv-split faces land
in different islands.  Filters drop overlapping layouts and fragments
(fewer than 5 vertices); survivors are re-unwrapped and scored against
the artist layout with SSIM on silhouette rasters, keeping the band where
an artist plausibly adjusted the unwrap by hand.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .atlas import intersecting_face_pairs, orient_island
from .losses import SilhouetteImage, rasterize_silhouette
from .mesh import Chart, Mesh, MeshError, boundary_loops
from .unwrap import UvChart, UvError, initial_uv, normalize_uv

logger = logging.getLogger(__name__)

FRAGMENT_VERTEX_LIMIT = 5          # islands below this vertex count are fragments
SSIM_BAND = (0.5, 0.8)             # similarity range kept as curated samples
CURATION_RESOLUTION = 256


@dataclass
class IslandRecord:
    island_id: str
    mesh_id: str
    chart: Chart
    artist_uv: UvChart
    vertex_count: int
    overlapping: bool = False
    fragment: bool = False
    selected: bool = False
    ssim: float | None = None
    reason: str = ""

    def manifest_row(self) -> dict:
        return {
            "island_id": self.island_id,
            "mesh_id": self.mesh_id,
            "vertex_count": self.vertex_count,
            "face_count": self.chart.n_faces,
            "overlapping": self.overlapping,
            "fragment": self.fragment,
            "selected": self.selected,
            "ssim": self.ssim,
            "reason": self.reason,
        }


def split_islands(mesh: Mesh, mesh_id: str = "") -> list[IslandRecord]:
    """Partition faces into uv-connected islands.

    Two faces are adjacent when they share an undirected uv edge (the same
    vt index pair).  Every face lands in exactly one island.
    """
    if not mesh.has_uvs():
        raise MeshError("split_islands needs a mesh with vt records")
    fuv = mesh.face_uvs
    parent = list(range(len(fuv)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edge_owner: dict[tuple[int, int], int] = {}
    for fi, (a, b, c) in enumerate(fuv):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(min(u, v)), int(max(u, v)))
            if key in edge_owner:
                ra, rb = find(fi), find(edge_owner[key])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
            else:
                edge_owner[key] = fi

    groups: dict[int, list[int]] = {}
    for fi in range(len(fuv)):
        groups.setdefault(find(fi), []).append(fi)

    records = []
    for k, root in enumerate(sorted(groups)):
        face_ids = np.asarray(groups[root], dtype=np.int64)
        sub_uv_faces = fuv[face_ids]
        used = np.unique(sub_uv_faces)
        remap = np.full(len(mesh.uvs), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        chart_faces = remap[sub_uv_faces]
        # chart vertices follow the uv split: one vertex per used vt record,
        # positioned at the corresponding 3D corner
        positions = np.zeros((len(used), 3))
        sub_faces3d = mesh.faces[face_ids]
        for corner in range(3):
            positions[chart_faces[:, corner]] = mesh.vertices[sub_faces3d[:, corner]]
        source = np.zeros(len(used), dtype=np.int64)
        for corner in range(3):
            source[chart_faces[:, corner]] = sub_faces3d[:, corner]
        chart = Chart(vertices=positions, faces=chart_faces,
                      vertex_source=source, face_source=face_ids,
                      boundary=tuple(tuple(loop) for loop in boundary_loops(chart_faces)))
        artist = UvChart(chart=chart, uv=mesh.uvs[used])
        records.append(IslandRecord(
            island_id=f"{mesh_id or 'mesh'}/island-{k:04d}",
            mesh_id=mesh_id,
            chart=chart,
            artist_uv=artist,
            vertex_count=chart.n_vertices,
        ))
    return records


def flag_filters(record: IslandRecord) -> IslandRecord:
    """Set the overlap (exact pairwise intersection) and fragment flags.

    Idempotent: the flags are pure functions of the island geometry.
    """
    record.fragment = record.vertex_count < FRAGMENT_VERTEX_LIMIT
    record.overlapping = bool(
        (np.asarray([_signed(record.artist_uv.uv, f) for f in record.chart.faces]) < 0).any()
        or intersecting_face_pairs(record.artist_uv.uv, record.chart.faces)
    )
    return record


def _signed(uv: np.ndarray, face) -> float:
    a, b, c = uv[face[0]], uv[face[1]], uv[face[2]]
    return 0.5 * float(np.cross(b - a, c - a))


# ---------------------------------------------------------------------------
# SSIM


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_score(img_a: SilhouetteImage | np.ndarray,
               img_b: SilhouetteImage | np.ndarray) -> float:
    """Structural similarity with the standard 11x11 Gaussian window
    (sigma 1.5), C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = 1 for unit-range
    images, averaged over fully valid window positions."""
    a = np.asarray(getattr(img_a, "pixels", img_a), dtype=np.float64)
    b = np.asarray(getattr(img_b, "pixels", img_b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"resolution mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < 16:
        raise ValueError("images must be at least 16 pixels per side")
    win = _gaussian_window()
    c1 = (0.01 * 1.0) ** 2
    c2 = (0.03 * 1.0) ** 2

    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    ssim_map = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)))
    return float(ssim_map.mean())


# ---------------------------------------------------------------------------
# Curation


def _curation_raster(uvchart: UvChart, resolution: int) -> SilhouetteImage:
    oriented = normalize_uv(orient_island(uvchart))
    # crisp half-pixel transition so SSIM compares shapes, not blur
    return rasterize_silhouette(oriented, resolution, sharpness=4.0 * resolution)


def curate(records: list[IslandRecord], resolution: int = CURATION_RESOLUTION,
           band: tuple[float, float] = SSIM_BAND) -> list[IslandRecord]:
    """Re-unwrap each surviving island and keep those whose SSIM against
    the artist layout falls inside the band.

    Too similar means nothing was adjusted by hand; too different means
    the artist layout is unrelated to the surface.  Islands the
    re-unwrapper cannot handle (non-disk) are excluded with a reason.
    """
    for record in records:
        flag_filters(record)
        if record.fragment or record.overlapping:
            record.selected = False
            record.reason = "fragment" if record.fragment else "overlapping"
            continue
        try:
            reunwrapped = normalize_uv(initial_uv(record.chart))
            img_artist = _curation_raster(record.artist_uv, resolution)
            img_re = _curation_raster(reunwrapped, resolution)
            record.ssim = ssim_score(img_artist, img_re)
        except (UvError, MeshError, ValueError) as exc:
            record.selected = False
            record.reason = f"re-unwrap failed: {exc}"
            logger.info("excluding %s: %s", record.island_id, exc)
            continue
        lo, hi = band
        record.selected = lo <= record.ssim <= hi
        record.reason = "" if record.selected else f"ssim {record.ssim:.3f} outside [{lo}, {hi}]"
    return records


def save_manifest(path, records: list[IslandRecord]) -> None:
    """JSON-lines manifest, one row per island, ordered by island id."""
    rows = sorted(records, key=lambda r: r.island_id)
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r.manifest_row(), sort_keys=True) + "\n")


def load_manifest(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
