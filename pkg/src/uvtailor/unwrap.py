"""Initial UV parameterization: Tutte embedding and free-boundary LSCM.

Both produce a :class:`UvChart` for a disk chart.  LSCM minimizes the
least-squares conformal energy with two pinned vertices; Tutte serves as
the provably bijective fallback when LSCM flips faces.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix, eye as speye
from scipy.sparse.linalg import factorized, spsolve

from .mesh import Chart, MeshError, triangle_local_frames, undirected_edges

logger = logging.getLogger(__name__)


class UvError(ValueError):
    """Invalid UV data or parameterization failure."""


@dataclass(frozen=True)
class UvChart:
    """One 2D coordinate per chart vertex; ``normalized`` means uv in [0,1]^2."""

    chart: Chart
    uv: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        uv = np.ascontiguousarray(np.asarray(self.uv, dtype=np.float64).reshape(-1, 2))
        if len(uv) != self.chart.n_vertices:
            raise UvError(f"uv count {len(uv)} != chart vertex count {self.chart.n_vertices}")
        if not np.isfinite(uv).all():
            raise UvError("non-finite uv coordinate")
        if self.normalized and (uv.min() < -1e-9 or uv.max() > 1.0 + 1e-9):
            raise UvError("normalized uv outside [0,1]")
        uv.setflags(write=False)
        object.__setattr__(self, "uv", uv)

    def replace_uv(self, uv: np.ndarray, normalized: bool = False) -> "UvChart":
        return UvChart(chart=self.chart, uv=uv, normalized=normalized)


def uv_signed_areas(uv: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Signed area of each UV triangle (positive = orientation preserved)."""
    uv = np.asarray(uv)
    f = np.asarray(faces)
    d1 = uv[f[:, 1]] - uv[f[:, 0]]
    d2 = uv[f[:, 2]] - uv[f[:, 0]]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def flipped_count(uvchart: UvChart) -> int:
    return int((uv_signed_areas(uvchart.uv, uvchart.chart.faces) < 0).sum())


def _require_disk(chart: Chart, op: str) -> None:
    if not chart.is_disk():
        raise UvError(f"{op} requires a disk chart (one boundary loop, Euler characteristic 1)")


def tutte_embed(chart: Chart) -> UvChart:
    """Uniform-weight Tutte embedding with the boundary on the unit circle.

    Boundary vertices are spaced by 3D arc length; interior vertices solve
    the uniform Laplace system.  Bijective on any disk chart.
    """
    _require_disk(chart, "tutte_embed")
    loop = list(chart.boundary[0])
    if len(loop) < 3:
        raise UvError("boundary loop needs at least 3 vertices")
    pts = chart.vertices[loop]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    total = seg.sum()
    if total <= 0:
        raise UvError("degenerate boundary (zero length)")
    angles = 2.0 * np.pi * np.concatenate([[0.0], np.cumsum(seg[:-1])]) / total
    n = chart.n_vertices
    uv = np.zeros((n, 2))
    uv[loop, 0] = np.cos(angles)
    uv[loop, 1] = np.sin(angles)

    on_boundary = np.zeros(n, dtype=bool)
    on_boundary[loop] = True
    interior = np.where(~on_boundary)[0]
    if len(interior):
        edges = undirected_edges(chart.faces)
        pos = np.full(n, -1, dtype=np.int64)
        pos[interior] = np.arange(len(interior))
        rows, cols, vals = [], [], []
        rhs = np.zeros((len(interior), 2))
        deg = np.zeros(n)
        np.add.at(deg, edges[:, 0], 1.0)
        np.add.at(deg, edges[:, 1], 1.0)
        for a, b in edges:
            for u, v in ((a, b), (b, a)):
                if on_boundary[u]:
                    continue
                if on_boundary[v]:
                    rhs[pos[u]] += uv[v]
                else:
                    rows.append(pos[u])
                    cols.append(pos[v])
                    vals.append(-1.0)
        rows.extend(range(len(interior)))
        cols.extend(range(len(interior)))
        vals.extend(deg[interior])
        lap = csc_matrix(coo_matrix((vals, (rows, cols)), shape=(len(interior),) * 2))
        uv[interior] = spsolve(lap, rhs).reshape(len(interior), 2)
    return UvChart(chart=chart, uv=uv)


def default_pins(chart: Chart) -> tuple[int, int]:
    """The boundary vertex pair at maximal 3D distance.

    Exact all-pairs search up to 2000 boundary vertices, two-sweep
    farthest-point heuristic beyond.
    """
    boundary = sorted({v for loop in chart.boundary for v in loop})
    if len(boundary) < 2:
        raise UvError("need at least 2 boundary vertices to pin")
    pts = chart.vertices[boundary]
    if len(boundary) <= 2000:
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        i, j = np.unravel_index(np.argmax(d2), d2.shape)
    else:
        i = 0
        j = int(np.argmax(((pts - pts[i]) ** 2).sum(axis=1)))
        i = int(np.argmax(((pts - pts[j]) ** 2).sum(axis=1)))
    a, b = boundary[int(i)], boundary[int(j)]
    return (a, b) if a < b else (b, a)


def _lscm_system(chart: Chart):
    """Sparse rows of the conformal residual, one (r1, r2) pair per face.

    With J the 2x2 Jacobian of the uv map in the face tangent frame,
    r1 = J00 - J11 and r2 = J01 + J10 vanish iff the face maps by an
    orientation-preserving similarity.  Rows are weighted by sqrt(area).
    """
    coords, areas = triangle_local_frames(chart.vertices, chart.faces)
    f = chart.faces
    m, n = len(f), chart.n_vertices
    # P = [[x1, x2], [y1, y2]] column-edge matrix, Pinv its inverse
    x1 = coords[:, 1, 0]
    x2, y2 = coords[:, 2, 0], coords[:, 2, 1]
    det = x1 * y2
    pinv = np.empty((m, 2, 2))
    pinv[:, 0, 0] = y2 / det
    pinv[:, 0, 1] = -x2 / det
    pinv[:, 1, 0] = 0.0
    pinv[:, 1, 1] = x1 / det
    w = np.sqrt(areas)

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for i in range(m):
        a, b, c = (int(v) for v in f[i])
        p00, p01, p10, p11 = pinv[i, 0, 0], pinv[i, 0, 1], pinv[i, 1, 0], pinv[i, 1, 1]
        r1, r2 = 2 * i, 2 * i + 1
        s = w[i]
        # r1 = J00 - J11; J00 = (u_b - u_a) p00 + (u_c - u_a) p10, J11 likewise in v with column 2 of pinv
        add(r1, b, s * p00); add(r1, c, s * p10); add(r1, a, -s * (p00 + p10))
        add(r1, n + b, -s * p01); add(r1, n + c, -s * p11); add(r1, n + a, s * (p01 + p11))
        # r2 = J01 + J10
        add(r2, b, s * p01); add(r2, c, s * p11); add(r2, a, -s * (p01 + p11))
        add(r2, n + b, s * p00); add(r2, n + c, s * p10); add(r2, n + a, -s * (p00 + p10))
    return coo_matrix((vals, (rows, cols)), shape=(2 * m, 2 * n)).tocsc()


def lscm(chart: Chart, pin_a: int | None = None, pin_b: int | None = None) -> UvChart:
    """Least-squares conformal map with two pinned vertices.

    Pins default to :func:`default_pins` and are fixed at (0,0) and (1,0).
    Solved via the normal equations with a sparse factorization; exact (up
    to solver tolerance) for developable charts.
    """
    _require_disk(chart, "lscm")
    if pin_a is None or pin_b is None:
        pin_a, pin_b = default_pins(chart)
    if pin_a == pin_b:
        raise UvError("pins must be distinct")
    n = chart.n_vertices
    A = _lscm_system(chart)
    pinned_cols = np.array([pin_a, pin_b, n + pin_a, n + pin_b])
    pinned_vals = np.array([0.0, 1.0, 0.0, 0.0])  # (0,0) and (1,0)
    free = np.setdiff1d(np.arange(2 * n), pinned_cols)
    rhs = -A[:, pinned_cols] @ pinned_vals
    Af = A[:, free]
    normal = (Af.T @ Af).tocsc()
    # tiny Tikhonov term guards rank deficiency from fully degenerate input
    normal = normal + speye(normal.shape[0], format="csc") * 1e-14
    try:
        sol = factorized(normal)(Af.T @ rhs)
    except RuntimeError as exc:
        raise UvError(f"LSCM system is singular: {exc}") from exc
    full = np.empty(2 * n)
    full[pinned_cols] = pinned_vals
    full[free] = sol
    uv = np.stack([full[:n], full[n:]], axis=1)
    if not np.isfinite(uv).all():
        raise UvError("LSCM produced non-finite coordinates (all faces degenerate?)")
    return UvChart(chart=chart, uv=uv)


def conformal_energy(uvchart: UvChart) -> float:
    """Area-weighted sum of squared conformal residuals (the LSCM objective)."""
    A = _lscm_system(uvchart.chart)
    n = uvchart.chart.n_vertices
    x = np.concatenate([uvchart.uv[:, 0], uvchart.uv[:, 1]])
    r = A @ x
    return float(r @ r)


def stretch_relax(uvchart: UvChart, iterations: int, pins: tuple[int, int] | None = None) -> UvChart:
    """Local-global as-rigid-as-possible iterations to reduce stretch.

    Alternates per-face best-fit rotations with a global sparse solve of
    min sum_f area_f * ||J_f - R_f||^2; with 0 iterations returns the input.
    """
    if iterations <= 0:
        return uvchart
    chart = uvchart.chart
    if pins is None:
        pins = default_pins(chart)
    coords, areas = triangle_local_frames(chart.vertices, chart.faces)
    f = chart.faces
    m, n = len(f), chart.n_vertices
    x1 = coords[:, 1, 0]
    x2, y2 = coords[:, 2, 0], coords[:, 2, 1]
    det = x1 * y2
    pinv = np.zeros((m, 2, 2))
    pinv[:, 0, 0] = y2 / det
    pinv[:, 0, 1] = -x2 / det
    pinv[:, 1, 1] = x1 / det
    w = np.sqrt(areas)

    # rows: 4 per face (J00, J01, J10, J11), unknowns [u; v]
    rows, cols, vals = [], [], []
    for i in range(m):
        a, b, c = (int(v) for v in f[i])
        s = w[i]
        for k, (col_off, p_col) in enumerate(((0, 0), (0, 1), (n, 0), (n, 1))):
            r = 4 * i + k
            p0, p1 = pinv[i, 0, p_col], pinv[i, 1, p_col]
            rows.extend([r, r, r])
            cols.extend([col_off + b, col_off + c, col_off + a])
            vals.extend([s * p0, s * p1, -s * (p0 + p1)])
    A = coo_matrix((vals, (rows, cols)), shape=(4 * m, 2 * n)).tocsc()
    pinned_cols = np.array([pins[0], pins[1], n + pins[0], n + pins[1]])
    uv = uvchart.uv.copy()
    pinned_vals = np.array([uv[pins[0], 0], uv[pins[1], 0], uv[pins[0], 1], uv[pins[1], 1]])
    free = np.setdiff1d(np.arange(2 * n), pinned_cols)
    Af = A[:, free]
    solve = factorized((Af.T @ Af).tocsc())

    for _ in range(iterations):
        d1 = uv[f[:, 1]] - uv[f[:, 0]]
        d2 = uv[f[:, 2]] - uv[f[:, 0]]
        j00 = d1[:, 0] * pinv[:, 0, 0] + d2[:, 0] * pinv[:, 1, 0]
        j01 = d1[:, 0] * pinv[:, 0, 1] + d2[:, 0] * pinv[:, 1, 1]
        j10 = d1[:, 1] * pinv[:, 0, 0] + d2[:, 1] * pinv[:, 1, 0]
        j11 = d1[:, 1] * pinv[:, 0, 1] + d2[:, 1] * pinv[:, 1, 1]
        theta = np.arctan2(j10 - j01, j00 + j11)
        rot = np.stack([np.cos(theta), -np.sin(theta), np.sin(theta), np.cos(theta)], axis=1)
        rhs_full = (w[:, None] * rot).reshape(-1)
        rhs = rhs_full - A[:, pinned_cols] @ pinned_vals
        sol = solve(Af.T @ rhs)
        full = np.empty(2 * n)
        full[pinned_cols] = pinned_vals
        full[free] = sol
        uv = np.stack([full[:n], full[n:]], axis=1)
    return UvChart(chart=chart, uv=uv)


def normalize_uv(uvchart: UvChart) -> UvChart:
    """Translate and uniformly scale into [0,1]^2, centered on the shorter axis."""
    uv = uvchart.uv
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    extent = hi - lo
    scale = extent.max()
    if scale <= 0:
        raise UvError("degenerate uv extent (all points coincident)")
    out = (uv - lo) / scale
    out += (1.0 - extent / scale) / 2.0  # center the shorter axis
    out = np.clip(out, 0.0, 1.0)
    return UvChart(chart=uvchart.chart, uv=out, normalized=True)


def initial_uv(chart: Chart, stretch_iterations: int = 0) -> UvChart:
    """LSCM initialization with a Tutte fallback when faces flip."""
    try:
        result = lscm(chart)
        if flipped_count(result) > 0:
            logger.warning("LSCM flipped %d faces; falling back to Tutte embedding",
                           flipped_count(result))
            result = tutte_embed(chart)
    except UvError:
        result = tutte_embed(chart)
    if stretch_iterations > 0:
        relaxed = stretch_relax(result, stretch_iterations)
        if flipped_count(relaxed) == 0:
            result = relaxed
    return result
