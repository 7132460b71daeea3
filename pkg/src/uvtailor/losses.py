"""Rotation alignment and the four UV losses, each with an analytic gradient.

The four terms: mean-L1 reconstruction against a reference layout,
L2 discrepancy between soft-rasterized silhouettes, area-weighted singular
value spread of the per-face 3D-to-2D Jacobian, and an orientation-flip
penalty (exact count plus a differentiable hinge surrogate).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Chart, MeshError, triangle_local_frames
from .unwrap import UvChart, uv_signed_areas


@dataclass(frozen=True)
class Rotation2:
    """Proper 2D rotation; ``degenerate`` flags an identity returned for
    inputs whose covariance vanished (all source points coincident)."""

    matrix: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(2, 2)
        if not np.allclose(m.T @ m, np.eye(2), atol=1e-9):
            raise ValueError("matrix is not orthogonal")
        if abs(np.linalg.det(m) - 1.0) > 1e-9:
            raise ValueError("matrix is not a proper rotation (det != +1)")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def angle(self) -> float:
        return float(np.arctan2(self.matrix[1, 0], self.matrix[0, 0]))


@dataclass
class LossWeights:
    recon: float = 1.0
    silhouette: float = 1.0
    distortion: float = 1e-4
    overlap: float = 0.01

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.recon, self.silhouette, self.distortion, self.overlap)


@dataclass
class RasterConfig:
    resolution: int = 256
    sharpness: float = 30.0


@dataclass
class LossReport:
    recon: float
    silhouette: float
    distortion: float
    overlap_soft: float
    overlap_count: int
    total: float
    grad: np.ndarray  # (N, 2), d total / d uv
    weights: LossWeights

    def to_json(self, include_grad: bool = False) -> str:
        data = {
            "recon": self.recon,
            "silhouette": self.silhouette,
            "distortion": self.distortion,
            "overlap_soft": self.overlap_soft,
            "overlap_count": self.overlap_count,
            "total": self.total,
            "weights": {
                "recon": self.weights.recon,
                "silhouette": self.weights.silhouette,
                "distortion": self.weights.distortion,
                "overlap": self.weights.overlap,
            },
        }
        if include_grad:
            data["grad"] = self.grad.tolist()
        return json.dumps(data, sort_keys=True)


# ---------------------------------------------------------------------------
# Horn rotation alignment


def horn_align(q_src: np.ndarray, q_dst: np.ndarray) -> Rotation2:
    """Optimal proper rotation taking centered q_src onto centered q_dst.

    Builds the 2x2 covariance of the centered correspondences, takes its
    SVD, and fixes the sign of the smaller singular direction so the
    result is always a rotation (never a reflection), which minimizes
    sum ||R (q - q_mean) - (p - p_mean)||^2 over proper rotations.
    """
    q = np.asarray(q_src, dtype=np.float64).reshape(-1, 2)
    p = np.asarray(q_dst, dtype=np.float64).reshape(-1, 2)
    if len(q) != len(p):
        raise ValueError(f"point count mismatch: {len(q)} vs {len(p)}")
    if len(q) < 2:
        raise ValueError("need at least 2 correspondences")
    qc = q - q.mean(axis=0)
    pc = p - p.mean(axis=0)
    w = pc.T @ qc  # dst x src outer-product sum, so R = U S V^T maps src onto dst
    if np.abs(w).max() < 1e-300:
        return Rotation2(matrix=np.eye(2), degenerate=True)
    u, _, vt = np.linalg.svd(w)
    s = np.diag([1.0, np.sign(np.linalg.det(u) * np.linalg.det(vt))])
    return Rotation2(matrix=u @ s @ vt)


def apply_alignment(q_src: np.ndarray, q_dst: np.ndarray,
                    with_scale: bool = False) -> tuple[np.ndarray, Rotation2]:
    """Transform q_src into q_dst's frame: rotate about the centroid, match
    centroids, and optionally apply the least-squares uniform scale."""
    q = np.asarray(q_src, dtype=np.float64).reshape(-1, 2)
    p = np.asarray(q_dst, dtype=np.float64).reshape(-1, 2)
    rot = horn_align(q, p)
    qc = q - q.mean(axis=0)
    pc = p - p.mean(axis=0)
    rotated = qc @ rot.matrix.T
    scale = 1.0
    if with_scale:
        denom = (qc * qc).sum()
        if denom > 0:
            scale = float((pc * rotated).sum() / denom)
            if scale <= 0:
                scale = 1.0
    return rotated * scale + p.mean(axis=0), rot


# ---------------------------------------------------------------------------
# Reconstruction loss


def recon_loss(q_pred: np.ndarray, q_gt: np.ndarray,
               r_align: Rotation2 | None = None) -> tuple[float, np.ndarray]:
    """Mean per-vertex L1 distance, optionally rotating q_pred by r_align first.

    Value is (1/N) sum_v (|du_v| + |dv_v|); the gradient is the sign
    pattern divided by N (subgradient 0 at exact zeros), chained through
    the rotation when one is given.
    """
    qp = np.asarray(q_pred, dtype=np.float64).reshape(-1, 2)
    qg = np.asarray(q_gt, dtype=np.float64).reshape(-1, 2)
    if len(qp) != len(qg):
        raise ValueError(f"point count mismatch: {len(qp)} vs {len(qg)}")
    r = None if r_align is None else r_align.matrix
    diff = (qp if r is None else qp @ r.T) - qg
    n = len(qp)
    value = float(np.abs(diff).sum() / n)
    grad = np.sign(diff) / n
    if r is not None:
        grad = grad @ r
    return value, grad


# ---------------------------------------------------------------------------
# Soft silhouette rasterization


@dataclass
class SilhouetteImage:
    """Soft coverage raster of a UV layout on the unit square.

    ``pixels[row, col]`` covers the pixel centered at
    ((col + 0.5) / res, (row + 0.5) / res); row 0 is v = 0.
    """

    resolution: int
    pixels: np.ndarray
    sharpness: float
    _vjp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (self.resolution, self.resolution):
            raise ValueError("pixel array does not match resolution")

    def backward(self, grad_pixels: np.ndarray) -> np.ndarray:
        """Chain a pixel-space gradient back to the uv coordinates."""
        if self._vjp is None:
            raise ValueError("this silhouette has no gradient path (loaded or ground-truth image)")
        return self._vjp(np.asarray(grad_pixels, dtype=np.float64))


def _boundary_halfedges(faces: np.ndarray, n_vertices: int) -> np.ndarray:
    """(B, 2) directed boundary half-edges, oriented as in their faces."""
    f = np.asarray(faces)
    he = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    fwd = he[:, 0] * n_vertices + he[:, 1]
    rev = he[:, 1] * n_vertices + he[:, 0]
    return he[~np.isin(fwd, rev)]


def _winding_inside(px: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Nonzero-winding inside test of pixels against the boundary polygon."""
    ay, by = seg_a[None, :, 1], seg_b[None, :, 1]
    py = px[:, 1][:, None]
    cross = ((seg_b[:, 0] - seg_a[:, 0])[None, :] * (py - ay)
             - (seg_b[:, 1] - seg_a[:, 1])[None, :] * (px[:, 0][:, None] - seg_a[None, :, 0]))
    up = (ay <= py) & (py < by) & (cross > 0)
    down = (by <= py) & (py < ay) & (cross < 0)
    winding = up.sum(axis=1) - down.sum(axis=1)
    return winding != 0


def _boundary_distance(px: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray):
    """Distance of pixels to the nearest boundary segment, with its gradient.

    Returns (dist (P,), grad_a (P,2), grad_b (P,2), which (P,)) where the
    gradients apply to the endpoints of the winning segment ``which``.
    """
    e = seg_b - seg_a                              # (B, 2)
    ee = np.maximum((e * e).sum(axis=1), 1e-300)
    rel = px[:, None, :] - seg_a[None, :, :]       # (P, B, 2)
    t = np.clip((rel[:, :, 0] * e[:, 0] + rel[:, :, 1] * e[:, 1]) / ee, 0.0, 1.0)
    dx = rel[:, :, 0] - t * e[:, 0]
    dy = rel[:, :, 1] - t * e[:, 1]
    d2 = dx * dx + dy * dy
    which = np.argmin(d2, axis=1)
    rows = np.arange(len(px))
    dist = np.sqrt(d2[rows, which])
    tw = t[rows, which]
    u = np.stack([dx[rows, which], dy[rows, which]], axis=1) / np.maximum(dist, 1e-300)[:, None]
    # point-to-segment distance derivative: the projection parameter's own
    # variation is orthogonal to u, so only the endpoint blend survives
    grad_a = -(1.0 - tw)[:, None] * u
    grad_b = -tw[:, None] * u
    return dist, grad_a, grad_b, which


def rasterize_silhouette(uv, resolution: int, sharpness: float = 30.0,
                         faces: np.ndarray | None = None) -> SilhouetteImage:
    """Differentiable coverage raster of a UV island over the unit square.

    ``uv`` is a UvChart (or a raw (N,2) array plus ``faces``).  Coverage is
    the logistic of the island's signed distance: distance to the nearest
    boundary edge, positive inside the boundary polygon (nonzero winding).
    Interior vertices do not move the silhouette, so the gradient (via
    :meth:`SilhouetteImage.backward`) lands on boundary vertices.
    """
    if resolution < 8:
        raise ValueError(f"resolution {resolution} < 8")
    uv_arr = np.asarray(getattr(uv, "uv", uv), dtype=np.float64).reshape(-1, 2)
    if faces is None:
        faces = uv.chart.faces
    f = np.asarray(faces)
    res = int(resolution)
    if len(f) == 0:
        return SilhouetteImage(res, np.zeros((res, res)), sharpness,
                               _vjp=lambda g: np.zeros_like(uv_arr))
    bedges = _boundary_halfedges(f, len(uv_arr))
    if len(bedges) == 0:
        raise ValueError("island has no boundary edges; cannot rasterize a silhouette")

    centers = (np.arange(res) + 0.5) / res
    cols, rows = np.meshgrid(centers, centers)
    px = np.stack([cols.ravel(), rows.ravel()], axis=1)
    seg_a, seg_b = uv_arr[bedges[:, 0]], uv_arr[bedges[:, 1]]

    chunk = max(1, int(8_000_000 / max(len(bedges), 1)))

    # forward results are O(pixels), cheap to keep for the backward pass
    pixels = np.empty(res * res)
    saved = []
    for start in range(0, len(px), chunk):
        block = px[start:start + chunk]
        dist, grad_a, grad_b, which = _boundary_distance(block, seg_a, seg_b)
        sign = np.where(_winding_inside(block, seg_a, seg_b), 1.0, -1.0)
        cov = 1.0 / (1.0 + np.exp(-sharpness * sign * dist))
        pixels[start:start + chunk] = cov
        saved.append((start, cov, grad_a, grad_b, which, sign))
    image = pixels.reshape(res, res)

    def vjp(grad_pixels: np.ndarray) -> np.ndarray:
        g = grad_pixels.reshape(-1)
        grad_uv = np.zeros_like(uv_arr)
        for start, cov, grad_a, grad_b, which, sign in saved:
            dcov = g[start:start + len(cov)] * sharpness * cov * (1.0 - cov) * sign
            np.add.at(grad_uv, bedges[which, 0], dcov[:, None] * grad_a)
            np.add.at(grad_uv, bedges[which, 1], dcov[:, None] * grad_b)
        return grad_uv

    return SilhouetteImage(res, image, sharpness, _vjp=vjp)


def silhouette_loss(pred: SilhouetteImage, gt: SilhouetteImage) -> tuple[float, np.ndarray | None]:
    """Mean squared pixel difference; gradient is chained back to the
    predicted layout's uv coordinates when that raster carries a path."""
    if pred.resolution != gt.resolution:
        raise ValueError(f"resolution mismatch: {pred.resolution} vs {gt.resolution}")
    diff = pred.pixels - gt.pixels
    npix = diff.size
    value = float((diff * diff).sum() / npix)
    grad_uv = None
    if pred._vjp is not None:
        grad_uv = pred.backward(2.0 * diff / npix)
    return value, grad_uv


def save_silhouette_png(image: SilhouetteImage, path) -> None:
    from PIL import Image

    arr = np.clip(image.pixels * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(arr[::-1, :], mode="L").save(Path(path))  # v axis points up


# ---------------------------------------------------------------------------
# Distortion loss (singular value spread of the face Jacobians)


def _face_jacobians(chart: Chart, uv: np.ndarray):
    coords, areas = triangle_local_frames(chart.vertices, chart.faces)
    f = chart.faces
    x1 = coords[:, 1, 0]
    x2, y2 = coords[:, 2, 0], coords[:, 2, 1]
    det = x1 * y2
    pinv = np.zeros((len(f), 2, 2))
    pinv[:, 0, 0] = y2 / det
    pinv[:, 0, 1] = -x2 / det
    pinv[:, 1, 1] = x1 / det
    d1 = uv[f[:, 1]] - uv[f[:, 0]]
    d2 = uv[f[:, 2]] - uv[f[:, 0]]
    jac = np.empty((len(f), 2, 2))
    jac[:, 0, 0] = d1[:, 0] * pinv[:, 0, 0] + d2[:, 0] * pinv[:, 1, 0]
    jac[:, 0, 1] = d1[:, 0] * pinv[:, 0, 1] + d2[:, 0] * pinv[:, 1, 1]
    jac[:, 1, 0] = d1[:, 1] * pinv[:, 0, 0] + d2[:, 1] * pinv[:, 1, 0]
    jac[:, 1, 1] = d1[:, 1] * pinv[:, 0, 1] + d2[:, 1] * pinv[:, 1, 1]
    return jac, pinv, areas


def singular_values_2x2(jac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form singular values of a batch of 2x2 matrices (max, min)."""
    e = (jac[:, 0, 0] + jac[:, 1, 1]) / 2.0
    f = (jac[:, 0, 0] - jac[:, 1, 1]) / 2.0
    g = (jac[:, 1, 0] + jac[:, 0, 1]) / 2.0
    h = (jac[:, 1, 0] - jac[:, 0, 1]) / 2.0
    q = np.hypot(e, h)
    r = np.hypot(f, g)
    return q + r, np.abs(q - r)


def distortion_loss(chart: Chart, uv) -> tuple[float, np.ndarray]:
    """Area-weighted mean of |sigma1 - sigma2| over faces, with gradient.

    sigma are the singular values of the per-face Jacobian taken in the
    face's orthonormal tangent frame; the loss vanishes exactly for
    angle-preserving (conformal) maps.  Where sigma1 = sigma2 the
    subgradient is zero; a degenerate *UV* face stays finite, a degenerate
    3D face is an error.
    """
    uv_arr = np.asarray(getattr(uv, "uv", uv), dtype=np.float64).reshape(-1, 2)
    jac, pinv, areas = _face_jacobians(chart, uv_arr)
    e = (jac[:, 0, 0] + jac[:, 1, 1]) / 2.0
    fm = (jac[:, 0, 0] - jac[:, 1, 1]) / 2.0
    g = (jac[:, 1, 0] + jac[:, 0, 1]) / 2.0
    h = (jac[:, 1, 0] - jac[:, 0, 1]) / 2.0
    q = np.hypot(e, h)
    r = np.hypot(fm, g)
    spread = 2.0 * np.minimum(q, r)  # == sigma_max - sigma_min
    total_area = areas.sum()
    value = float((areas * spread).sum() / total_area)

    # d spread / d J, branch on which of q, r is the minimum
    dj = np.zeros_like(jac)
    use_q = q < r
    qs = np.maximum(q, 1e-300)
    rs = np.maximum(r, 1e-300)
    zero = np.minimum(q, r) < 1e-300  # sigma1 == sigma2: subgradient 0
    dj[:, 0, 0] = np.where(use_q, e / qs, fm / rs)
    dj[:, 1, 1] = np.where(use_q, e / qs, -fm / rs)
    dj[:, 1, 0] = np.where(use_q, h / qs, g / rs)
    dj[:, 0, 1] = np.where(use_q, -h / qs, g / rs)
    dj[zero] = 0.0
    dj *= (areas / total_area)[:, None, None]

    # chain through J = D_uv @ Pinv:  dL/dD_uv = dL/dJ @ Pinv^T
    dd = np.einsum("mij,mkj->mik", dj, pinv)
    grad = np.zeros_like(uv_arr)
    f = chart.faces
    np.add.at(grad, f[:, 1], np.stack([dd[:, 0, 0], dd[:, 1, 0]], axis=1))
    np.add.at(grad, f[:, 2], np.stack([dd[:, 0, 1], dd[:, 1, 1]], axis=1))
    np.add.at(grad, f[:, 0], -np.stack([dd[:, 0, 0] + dd[:, 0, 1], dd[:, 1, 0] + dd[:, 1, 1]], axis=1))
    return value, grad


def conformal_distortion_metric(chart: Chart, uv, normalize_scale: bool = True) -> float:
    """The distortion value with the global uv scale factored out.

    Dividing the Jacobians by the square root of the uv-to-3D area ratio
    makes the metric invariant under the packing transform (rotation,
    translation, uniform scale).
    """
    uv_arr = np.asarray(getattr(uv, "uv", uv), dtype=np.float64).reshape(-1, 2)
    jac, _, areas = _face_jacobians(chart, uv_arr)
    if normalize_scale:
        uv_area = np.abs(uv_signed_areas(uv_arr, chart.faces)).sum()
        ratio = uv_area / areas.sum()
        if ratio > 0:
            jac = jac / np.sqrt(ratio)
    smax, smin = singular_values_2x2(jac)
    return float((areas * (smax - smin)).sum() / areas.sum())


# ---------------------------------------------------------------------------
# Overlap terms


@dataclass
class OverlapTerms:
    count: int
    soft: float
    grad: np.ndarray


def overlap_terms(chart: Chart, uv, margin: float = 1e-6,
                  area_norm: float | None = None) -> OverlapTerms:
    """Exact flipped-face count plus a differentiable hinge surrogate.

    A face is flipped when its UV signed area is negative (the face normal
    points along -z).  The surrogate sums max(0, margin - area) over faces,
    normalized by ``area_norm`` (total |area| of a reference layout;
    defaults to the current one, treated as constant), so degenerate faces
    with area 0 < margin also contribute gradient.
    """
    uv_arr = np.asarray(getattr(uv, "uv", uv), dtype=np.float64).reshape(-1, 2)
    f = chart.faces
    signed = uv_signed_areas(uv_arr, f)
    count = int((signed < 0).sum())
    if area_norm is None:
        area_norm = float(np.abs(signed).sum())
    denom = max(area_norm, 1e-300)
    active = signed < margin
    soft = float(np.maximum(0.0, margin - signed).sum() / denom)

    grad = np.zeros_like(uv_arr)
    if active.any():
        fa = f[active]
        p0, p1, p2 = uv_arr[fa[:, 0]], uv_arr[fa[:, 1]], uv_arr[fa[:, 2]]
        scale = -0.5 / denom  # d(-area)/d corners, times 1/denom
        rot = lambda d: np.stack([-d[:, 1], d[:, 0]], axis=1)
        np.add.at(grad, fa[:, 0], scale * rot(p2 - p1))
        np.add.at(grad, fa[:, 1], scale * rot(p0 - p2))
        np.add.at(grad, fa[:, 2], scale * rot(p1 - p0))
    return OverlapTerms(count=count, soft=soft, grad=grad)


# ---------------------------------------------------------------------------
# Weighted total


def total_loss(chart: Chart, q_pred, q_gt, weights: LossWeights | None = None,
               raster: RasterConfig | None = None,
               overlap_margin: float = 1e-6,
               overlap_area_norm: float | None = None,
               gt_image: SilhouetteImage | None = None) -> LossReport:
    """Weighted combination of all four terms with the summed uv gradient.

    Expects q_pred and q_gt already expressed in a common frame (the
    caller aligns the initialization via :func:`horn_align` beforehand).
    A precomputed ``gt_image`` skips re-rasterizing the reference layout.
    """
    weights = weights or LossWeights()
    raster = raster or RasterConfig()
    qp = np.asarray(getattr(q_pred, "uv", q_pred), dtype=np.float64).reshape(-1, 2)
    qg = np.asarray(getattr(q_gt, "uv", q_gt), dtype=np.float64).reshape(-1, 2)

    r_val, r_grad = recon_loss(qp, qg)
    pred_img = rasterize_silhouette(qp, raster.resolution, raster.sharpness, faces=chart.faces)
    gt_img = gt_image if gt_image is not None else rasterize_silhouette(
        qg, raster.resolution, raster.sharpness, faces=chart.faces)
    s_val, s_grad = silhouette_loss(pred_img, gt_img)
    d_val, d_grad = distortion_loss(chart, qp)
    ov = overlap_terms(chart, qp, margin=overlap_margin, area_norm=overlap_area_norm)

    total = (weights.recon * r_val + weights.silhouette * s_val
             + weights.distortion * d_val + weights.overlap * ov.soft)
    grad = (weights.recon * r_grad + weights.silhouette * s_grad
            + weights.distortion * d_grad + weights.overlap * ov.grad)
    if not np.isfinite(total) or not np.isfinite(grad).all():
        raise FloatingPointError("non-finite loss or gradient")
    return LossReport(recon=r_val, silhouette=s_val, distortion=d_val,
                      overlap_soft=ov.soft, overlap_count=ov.count,
                      total=float(total), grad=grad, weights=weights)
