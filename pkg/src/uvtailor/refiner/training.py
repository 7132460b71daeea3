"""Training loop: seeded Adam over shuffled mini-batches of charts.

Samples are aligned to their reference layout once up front (rotation +
centroid via Horn's method, optional least-squares scale).  With a fixed
seed and single-threaded execution the run is bitwise reproducible.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..losses import (LossWeights, RasterConfig, SilhouetteImage, apply_alignment,
                      rasterize_silhouette, total_loss)
from ..mesh import Chart
from ..unwrap import uv_signed_areas
from .network import (
    Architecture,
    FeaturePack,
    Normalizers,
    RefinerParams,
    build_feature_pack,
    fit_normalizers,
    forward_graph,
    init_params,
    scaled_architecture,
)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"UVTCKPT1"


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 8
    steps: int = 500
    seed: int = 0
    raster: RasterConfig = field(default_factory=lambda: RasterConfig(64, 30.0))
    width_scale: float = 0.25
    enc_layers: int = 2
    sage_layers: int = 5
    align_scale: bool = True
    overlap_margin: float = 1e-6

    def to_dict(self) -> dict:
        return {
            "weights": list(self.weights.as_tuple()),
            "lr": self.lr,
            "betas": list(self.betas),
            "eps": self.eps,
            "batch_size": self.batch_size,
            "steps": self.steps,
            "seed": self.seed,
            "raster": [self.raster.resolution, self.raster.sharpness],
            "width_scale": self.width_scale,
            "enc_layers": self.enc_layers,
            "sage_layers": self.sage_layers,
            "align_scale": self.align_scale,
            "overlap_margin": self.overlap_margin,
        }

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        w = data.get("weights", [1.0, 1.0, 1e-4, 0.01])
        r = data.get("raster", [64, 30.0])
        return TrainConfig(
            weights=LossWeights(*[float(x) for x in w]),
            lr=float(data.get("lr", 1e-4)),
            betas=tuple(float(x) for x in data.get("betas", (0.9, 0.999))),
            eps=float(data.get("eps", 1e-8)),
            batch_size=int(data.get("batch_size", 8)),
            steps=int(data.get("steps", 500)),
            seed=int(data.get("seed", 0)),
            raster=RasterConfig(int(r[0]), float(r[1])),
            width_scale=float(data.get("width_scale", 0.25)),
            enc_layers=int(data.get("enc_layers", 2)),
            sage_layers=int(data.get("sage_layers", 5)),
            align_scale=bool(data.get("align_scale", True)),
            overlap_margin=float(data.get("overlap_margin", 1e-6)),
        )


@dataclass
class TrainSample:
    chart: Chart
    q_init: np.ndarray
    q_gt: np.ndarray
    sample_id: str = ""


@dataclass
class _Prepared:
    sample: TrainSample
    pack: FeaturePack
    q_init_aligned: np.ndarray
    area_norm: float
    gt_image: SilhouetteImage | None = None


@dataclass
class StepStats:
    step: int
    recon: float
    silhouette: float
    distortion: float
    overlap_soft: float
    overlap_count: int
    total: float


def prepare_sample(sample: TrainSample, normalizers: Normalizers,
                   align_scale: bool = True,
                   raster: RasterConfig | None = None) -> _Prepared:
    aligned, _ = apply_alignment(sample.q_init, sample.q_gt, with_scale=align_scale)
    pack = build_feature_pack(sample.chart, aligned, normalizers)
    area_norm = float(np.abs(uv_signed_areas(aligned, sample.chart.faces)).sum())
    gt_image = None
    if raster is not None:
        gt_image = rasterize_silhouette(sample.q_gt, raster.resolution,
                                        raster.sharpness, faces=sample.chart.faces)
    return _Prepared(sample=sample, pack=pack, q_init_aligned=aligned,
                     area_norm=area_norm, gt_image=gt_image)


def train(dataset: list[TrainSample], config: TrainConfig,
          params: RefinerParams | None = None) -> tuple[RefinerParams, list[StepStats]]:
    """Adam over shuffled mini-batches; per-step loss terms in the history.

    A NaN loss aborts with the offending sample id; parameters are checked
    finite after every update.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if params is None:
        normalizers = fit_normalizers([s.chart for s in dataset])
        arch = scaled_architecture(config.width_scale, config.enc_layers, config.sage_layers)
        params = init_params(arch, normalizers, seed=config.seed)
    prepared = [prepare_sample(s, params.normalizers, config.align_scale, config.raster)
                for s in dataset]

    rng = np.random.default_rng(config.seed)
    names = params.names()
    m = {n: np.zeros_like(params.values[n]) for n in names}
    v = {n: np.zeros_like(params.values[n]) for n in names}
    b1, b2 = config.betas
    history: list[StepStats] = []
    order: list[int] = []

    for step in range(1, config.steps + 1):
        while len(order) < config.batch_size:
            order.extend(rng.permutation(len(prepared)).tolist())
        batch = [prepared[i] for i in order[:config.batch_size]]
        order = order[config.batch_size:]

        grads = {n: np.zeros_like(params.values[n]) for n in names}
        sums = np.zeros(5)
        count_sum = 0
        for item in batch:
            offsets, pt = forward_graph(params, item.pack)
            q_pred = item.q_init_aligned + offsets.data
            report = total_loss(item.sample.chart, q_pred, item.sample.q_gt,
                                weights=config.weights, raster=config.raster,
                                overlap_margin=config.overlap_margin,
                                overlap_area_norm=item.area_norm,
                                gt_image=item.gt_image)
            if not np.isfinite(report.total):
                raise FloatingPointError(f"non-finite loss on sample {item.sample.sample_id!r}")
            offsets.backward(report.grad)
            for n in names:
                if pt[n].grad is not None:
                    grads[n] += pt[n].grad
            sums += (report.recon, report.silhouette, report.distortion,
                     report.overlap_soft, report.total)
            count_sum += report.overlap_count

        scale = 1.0 / len(batch)
        t = step
        for n in names:
            g = grads[n] * scale
            m[n] = b1 * m[n] + (1.0 - b1) * g
            v[n] = b2 * v[n] + (1.0 - b2) * g * g
            mhat = m[n] / (1.0 - b1 ** t)
            vhat = v[n] / (1.0 - b2 ** t)
            params.values[n] = params.values[n] - config.lr * mhat / (np.sqrt(vhat) + config.eps)
        params.check_finite()

        stats = StepStats(step=step, recon=sums[0] * scale, silhouette=sums[1] * scale,
                          distortion=sums[2] * scale, overlap_soft=sums[3] * scale,
                          overlap_count=count_sum, total=sums[4] * scale)
        history.append(stats)
        if step == 1 or step % 100 == 0:
            logger.info("step %d: total %.6f recon %.6f silhouette %.6f", step,
                        stats.total, stats.recon, stats.silhouette)
    return params, history


# ---------------------------------------------------------------------------
# Checkpoint and history files


def save_checkpoint(path, params: RefinerParams, config: TrainConfig) -> None:
    """Self-describing binary: magic, JSON header (arch, normalizers, config,
    array names and shapes), then float64 little-endian payloads in order."""
    names = params.names()
    header = {
        "arch": params.arch.to_dict(),
        "normalizers": params.normalizers.to_dict(),
        "config": config.to_dict(),
        "arrays": [{"name": n, "shape": list(params.values[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params.values[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[RefinerParams, TrainConfig]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a refiner checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        values = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            n_items = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n_items)
            values[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    params = RefinerParams(values=values,
                           arch=Architecture.from_dict(header["arch"]),
                           normalizers=Normalizers.from_dict(header["normalizers"]))
    return params, TrainConfig.from_dict(header["config"])


def save_history_csv(path, history: list[StepStats]) -> None:
    lines = ["step,recon,silhouette,distortion,overlap_soft,overlap_count,total"]
    for s in history:
        lines.append(f"{s.step},{s.recon!r},{s.silhouette!r},{s.distortion!r},"
                     f"{s.overlap_soft!r},{s.overlap_count},{s.total!r}")
    Path(path).write_text("\n".join(lines) + "\n")
