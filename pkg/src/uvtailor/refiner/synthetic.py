"""Synthetic training pairs: warped grids with an axis-aligned target layout.

The reference layout is the unit grid (straight boundaries, uniform
cells); the 3D chart is the same grid lifted by seeded Gaussian bumps
plus a small in-plane warp; the initial layout is the LSCM unwrap of the
warped chart.  The pair mimics "software unwrap vs. hand-tuned unwrap".
"""

from __future__ import annotations

import numpy as np

from ..mesh import Chart, boundary_loops, face_normals_areas
from ..unwrap import initial_uv, normalize_uv
from .training import TrainSample


def _bumps(rng: np.random.Generator, pts: np.ndarray, n_bumps: int) -> np.ndarray:
    centers = rng.uniform(0.15, 0.85, size=(n_bumps, 2))
    sigmas = rng.uniform(0.12, 0.3, size=n_bumps)
    amps = rng.uniform(-1.0, 1.0, size=n_bumps)
    amps /= max(np.abs(amps).sum(), 1e-12)  # bounded: |field| <= 1
    field = np.zeros(len(pts))
    for c, s, a in zip(centers, sigmas, amps):
        d2 = ((pts - c) ** 2).sum(axis=1)
        field += a * np.exp(-d2 / (2.0 * s * s))
    return field


def make_synthetic_pair(seed: int, grid_res: int = 8, warp: float = 0.3) -> TrainSample:
    """Deterministic (chart, q_init, q_gt) sample for one seed.

    A grid_res x grid_res vertex grid gives (grid_res - 1)^2 * 2 faces.
    Warps that degenerate a 3D face are resampled with a retry cap.
    """
    if grid_res < 3:
        raise ValueError("grid_res must be >= 3")
    base = np.linspace(0.0, 1.0, grid_res)
    gx, gy = np.meshgrid(base, base)
    q_gt = np.stack([gx.ravel(), gy.ravel()], axis=1)

    faces = []
    for j in range(grid_res - 1):
        for i in range(grid_res - 1):
            a = j * grid_res + i
            faces.append((a, a + 1, a + grid_res + 1))
            faces.append((a, a + grid_res + 1, a + grid_res))
    faces = np.asarray(faces, dtype=np.int64)

    for attempt in range(20):
        rng = np.random.default_rng((seed, attempt))
        z = warp * _bumps(rng, q_gt, 3)
        dx = 0.25 * warp * _bumps(rng, q_gt, 2)
        dy = 0.25 * warp * _bumps(rng, q_gt, 2)
        verts = np.stack([q_gt[:, 0] + dx, q_gt[:, 1] + dy, z], axis=1)
        _, areas = face_normals_areas(verts, faces)
        if areas.min() > 1e-9:
            break
    else:
        raise RuntimeError(f"seed {seed}: could not sample a non-degenerate warp")

    chart = Chart(
        vertices=verts,
        faces=faces,
        vertex_source=np.arange(len(verts)),
        face_source=np.arange(len(faces)),
        boundary=tuple(tuple(loop) for loop in boundary_loops(faces)),
    )
    q_init = normalize_uv(initial_uv(chart)).uv
    return TrainSample(chart=chart, q_init=q_init, q_gt=q_gt,
                       sample_id=f"synthetic-{seed}")
