"""Reference-free refinement: gradient descent directly on uv coordinates.

Minimizes distortion plus the overlap hinge plus a boundary-axis-alignment
surrogate (each boundary edge is pulled toward the nearest multiple of
90 degrees).  Steps are accepted only while the objective improves; the
returned layout is the best accepted iterate that neither increases the
flip count nor (with boundary weight 0) the distortion.
"""

from __future__ import annotations

import logging

import numpy as np

from ..losses import LossWeights, distortion_loss, overlap_terms
from ..mesh import Chart
from ..unwrap import UvChart, uv_signed_areas

logger = logging.getLogger(__name__)


def _boundary_edge_list(chart: Chart) -> np.ndarray:
    pairs = []
    for loop in chart.boundary:
        for a, b in zip(loop, loop[1:] + loop[:1]):
            pairs.append((a, b))
    return np.asarray(pairs, dtype=np.int64)


def boundary_axis_penalty(uv: np.ndarray, edges: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over boundary edges of (1 - cos(4 theta)) / 2.

    Zero when every boundary edge is horizontal or vertical; smooth with
    period 90 degrees.  Zero-length edges are skipped.
    """
    d = uv[edges[:, 1]] - uv[edges[:, 0]]
    len2 = (d * d).sum(axis=1)
    ok = len2 > 1e-18
    theta = np.arctan2(d[ok, 1], d[ok, 0])
    n = max(int(ok.sum()), 1)
    value = float((0.5 * (1.0 - np.cos(4.0 * theta))).sum() / n)
    grad = np.zeros_like(uv)
    if ok.any():
        dpen = 2.0 * np.sin(4.0 * theta) / n          # d/d theta
        dtheta = np.stack([-d[ok, 1], d[ok, 0]], axis=1) / len2[ok, None]
        contrib = dpen[:, None] * dtheta
        np.add.at(grad, edges[ok, 1], contrib)
        np.add.at(grad, edges[ok, 0], -contrib)
    return value, grad


def direct_refine(chart: Chart, uvchart: UvChart, weights: LossWeights | None = None,
                  steps: int = 200, boundary_weight: float = 0.1,
                  overlap_margin: float = 1e-6, initial_step: float = 0.05,
                  patience: int = 50) -> UvChart:
    """Descend on the uv coordinates; returns the best accepted layout.

    The step size adapts (grow on success, halve on failure); ``patience``
    consecutive non-improving steps stop the run with a warning and the
    best iterate so far.
    """
    weights = weights or LossWeights()
    uv = uvchart.uv.copy()
    bedges = _boundary_edge_list(chart)
    area_norm = float(np.abs(uv_signed_areas(uv, chart.faces)).sum())
    init_count = overlap_terms(chart, uv, overlap_margin, area_norm).count
    init_distortion = distortion_loss(chart, uv)[0]

    def objective(q: np.ndarray) -> tuple[float, np.ndarray, int, float]:
        d_val, d_grad = distortion_loss(chart, q)
        ov = overlap_terms(chart, q, overlap_margin, area_norm)
        total = weights.distortion * d_val + weights.overlap * ov.soft
        grad = weights.distortion * d_grad + weights.overlap * ov.grad
        if boundary_weight != 0.0:
            b_val, b_grad = boundary_axis_penalty(q, bedges)
            total += boundary_weight * b_val
            grad += boundary_weight * b_grad
        return total, grad, ov.count, d_val

    def qualifies(count: int, dist: float) -> bool:
        if count > init_count:
            return False
        # the distortion cap applies only when no flips were repaired: a
        # repair must be allowed to trade some distortion for orientation
        if boundary_weight == 0.0 and count >= init_count and dist > init_distortion + 1e-6:
            return False
        return True

    cur_val, cur_grad, cur_count, cur_dist = objective(uv)
    best_uv, best_key = uv.copy(), (cur_count, cur_val)  # the input always qualifies
    lr = initial_step
    fails = 0
    for _ in range(steps):
        gnorm = np.abs(cur_grad).max()
        if gnorm < 1e-15:
            break
        cand = uv - lr * cur_grad / gnorm
        val, grad, count, dist = objective(cand)
        if val < cur_val:
            uv, cur_val, cur_grad, cur_count, cur_dist = cand, val, grad, count, dist
            lr *= 1.2
            fails = 0
            if (count, val) < best_key and qualifies(count, dist):
                best_uv, best_key = uv.copy(), (count, val)
        else:
            lr *= 0.5
            fails += 1
            if fails >= patience:
                logger.warning("direct_refine: no improvement for %d steps, "
                               "returning best iterate", patience)
                break
    return UvChart(chart=chart, uv=best_uv)
