"""The offset-predicting network and its gradient plumbing.

Pipeline: per-feature embedding blocks with a linear residual, mean-
aggregating graph convolutions over the vertex adjacency, a self-attention
encoder, and a two-stage coarse-to-fine decoder over a Morton-sorted
vertex ordering.  The output head is linear -> tanh -> 2, so every
predicted offset component lies in (-1, 1) and the refined map is
``q_init + offsets`` with no hidden renormalization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, concat, softmax_rows
from ..mesh import Chart, compute_attributes, undirected_edges

logger = logging.getLogger(__name__)

# Reference widths; a deployment scales these down uniformly.
BASE_EMBED_WIDTHS = {"q_init": 128, "position": 62, "normal": 32, "degree": 32, "curvature": 32}
BASE_GRAPH_WIDTH = 512
BASE_ENC_HEADS = 8
FEATURE_DIMS = {"q_init": 2, "position": 3, "normal": 3, "degree": 1, "curvature": 1}
FEATURE_ORDER = ("q_init", "position", "normal", "degree", "curvature")


@dataclass(frozen=True)
class Architecture:
    embed_widths: dict[str, int]
    graph_width: int
    sage_layers: int
    enc_width: int
    enc_heads: int
    enc_layers: int
    ffn_mult: int = 2

    def to_dict(self) -> dict:
        return {
            "embed_widths": dict(self.embed_widths),
            "graph_width": self.graph_width,
            "sage_layers": self.sage_layers,
            "enc_width": self.enc_width,
            "enc_heads": self.enc_heads,
            "enc_layers": self.enc_layers,
            "ffn_mult": self.ffn_mult,
        }

    @staticmethod
    def from_dict(data: dict) -> "Architecture":
        return Architecture(
            embed_widths={k: int(v) for k, v in data["embed_widths"].items()},
            graph_width=int(data["graph_width"]),
            sage_layers=int(data["sage_layers"]),
            enc_width=int(data["enc_width"]),
            enc_heads=int(data["enc_heads"]),
            enc_layers=int(data["enc_layers"]),
            ffn_mult=int(data.get("ffn_mult", 2)),
        )


def scaled_architecture(width_scale: float = 0.25, enc_layers: int = 2,
                        sage_layers: int = 5) -> Architecture:
    """Scale the reference widths down; heads follow the encoder width."""
    def w(base: int) -> int:
        return max(1, int(round(base * width_scale)))

    enc_width = w(BASE_GRAPH_WIDTH)
    return Architecture(
        embed_widths={k: w(v) for k, v in BASE_EMBED_WIDTHS.items()},
        graph_width=w(BASE_GRAPH_WIDTH),
        sage_layers=sage_layers,
        enc_width=enc_width,
        enc_heads=max(1, enc_width // 32),
        enc_layers=enc_layers,
    )


@dataclass(frozen=True)
class Normalizers:
    """Train-set statistics for the z-scored scalar channels."""

    degree_mean: float
    degree_std: float
    curvature_mean: float
    curvature_std: float

    def to_dict(self) -> dict:
        return {
            "degree_mean": self.degree_mean,
            "degree_std": self.degree_std,
            "curvature_mean": self.curvature_mean,
            "curvature_std": self.curvature_std,
        }

    @staticmethod
    def from_dict(data: dict) -> "Normalizers":
        return Normalizers(**{k: float(v) for k, v in data.items()})


def fit_normalizers(charts: list[Chart]) -> Normalizers:
    degs, curvs = [], []
    for chart in charts:
        attrs = compute_attributes(chart)
        degs.append(attrs.degrees.astype(np.float64))
        curvs.append(attrs.curvature)
    deg = np.concatenate(degs)
    curv = np.concatenate(curvs)
    return Normalizers(
        degree_mean=float(deg.mean()),
        degree_std=float(max(deg.std(), 1e-8)),
        curvature_mean=float(curv.mean()),
        curvature_std=float(max(curv.std(), 1e-8)),
    )


@dataclass
class FeaturePack:
    """Per-vertex inputs plus the adjacency and Morton ordering for one chart."""

    q_init: np.ndarray      # (N, 2)
    position: np.ndarray    # (N, 3), centered and scaled by the bbox diagonal
    normal: np.ndarray      # (N, 3)
    degree: np.ndarray      # (N, 1), z-scored
    curvature: np.ndarray   # (N, 1), z-scored
    adjacency: np.ndarray   # (N, N) row-normalized, symmetric support
    order: np.ndarray       # (N,) Morton sort of q_init
    inverse_order: np.ndarray

    @property
    def n(self) -> int:
        return len(self.q_init)

    def feature(self, name: str) -> np.ndarray:
        return {"q_init": self.q_init, "position": self.position, "normal": self.normal,
                "degree": self.degree, "curvature": self.curvature}[name]


def _morton_order(q: np.ndarray) -> np.ndarray:
    lo = q.min(axis=0)
    extent = np.maximum(q.max(axis=0) - lo, 1e-12)
    grid = np.clip(((q - lo) / extent * 65535.0).astype(np.uint64), 0, 65535)

    def part1by1(x: np.ndarray) -> np.ndarray:
        x = (x | (x << 8)) & 0x00FF00FF
        x = (x | (x << 4)) & 0x0F0F0F0F
        x = (x | (x << 2)) & 0x33333333
        x = (x | (x << 1)) & 0x55555555
        return x

    code = part1by1(grid[:, 0]) | (part1by1(grid[:, 1]) << np.uint64(1))
    return np.argsort(code, kind="stable")


def build_feature_pack(chart: Chart, q_init: np.ndarray,
                       normalizers: Normalizers) -> FeaturePack:
    attrs = compute_attributes(chart)
    pos = chart.vertices - chart.vertices.mean(axis=0)
    diag = np.linalg.norm(chart.vertices.max(axis=0) - chart.vertices.min(axis=0))
    pos = pos / max(diag, 1e-12)
    deg = (attrs.degrees.astype(np.float64) - normalizers.degree_mean) / normalizers.degree_std
    curv = (attrs.curvature - normalizers.curvature_mean) / normalizers.curvature_std

    n = chart.n_vertices
    edges = undirected_edges(chart.faces)
    adj = np.zeros((n, n))
    adj[edges[:, 0], edges[:, 1]] = 1.0
    adj[edges[:, 1], edges[:, 0]] = 1.0
    rowsum = np.maximum(adj.sum(axis=1, keepdims=True), 1.0)
    adj /= rowsum

    q = np.asarray(q_init, dtype=np.float64).reshape(-1, 2)
    order = _morton_order(q)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(n)
    return FeaturePack(q_init=q, position=pos, normal=attrs.normals.copy(),
                       degree=deg[:, None], curvature=curv[:, None],
                       adjacency=adj, order=order, inverse_order=inverse)


# ---------------------------------------------------------------------------
# Parameters


@dataclass
class RefinerParams:
    values: dict[str, np.ndarray]
    arch: Architecture
    normalizers: Normalizers

    def names(self) -> list[str]:
        return sorted(self.values)

    def n_parameters(self) -> int:
        return sum(v.size for v in self.values.values())

    def check_finite(self) -> None:
        for name, v in self.values.items():
            if not np.isfinite(v).all():
                raise FloatingPointError(f"non-finite parameter {name}")


def _param_shapes(arch: Architecture) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name in FEATURE_ORDER:
        d, w = FEATURE_DIMS[name], arch.embed_widths[name]
        shapes[f"embed_{name}_w1"] = (d, w)
        shapes[f"embed_{name}_b1"] = (w,)
        shapes[f"embed_{name}_w2"] = (w, w)
        shapes[f"embed_{name}_b2"] = (w,)
        shapes[f"embed_{name}_res_w"] = (d, w)
    concat_w = sum(arch.embed_widths[n] for n in FEATURE_ORDER)
    width = arch.graph_width
    for i in range(arch.sage_layers):
        d_in = concat_w if i == 0 else width
        shapes[f"sage_{i}_self_w"] = (d_in, width)
        shapes[f"sage_{i}_neigh_w"] = (d_in, width)
        shapes[f"sage_{i}_b"] = (width,)
    e = arch.enc_width
    for i in range(arch.enc_layers):
        shapes[f"enc_{i}_ln1_g"] = (e,)
        shapes[f"enc_{i}_ln1_b"] = (e,)
        shapes[f"enc_{i}_wq"] = (e, e)
        shapes[f"enc_{i}_wk"] = (e, e)
        shapes[f"enc_{i}_wv"] = (e, e)
        shapes[f"enc_{i}_wo"] = (e, e)
        shapes[f"enc_{i}_ln2_g"] = (e,)
        shapes[f"enc_{i}_ln2_b"] = (e,)
        shapes[f"enc_{i}_ffn_w1"] = (e, e * arch.ffn_mult)
        shapes[f"enc_{i}_ffn_b1"] = (e * arch.ffn_mult,)
        shapes[f"enc_{i}_ffn_w2"] = (e * arch.ffn_mult, e)
        shapes[f"enc_{i}_ffn_b2"] = (e,)
    shapes["pyr_down1_w"] = (e, e)
    shapes["pyr_down1_b"] = (e,)
    shapes["pyr_down2_w"] = (e, e)
    shapes["pyr_down2_b"] = (e,)
    shapes["pyr_up1_w"] = (2 * e, e)
    shapes["pyr_up1_b"] = (e,)
    shapes["pyr_up0_w"] = (2 * e, e)
    shapes["pyr_up0_b"] = (e,)
    shapes["head_w"] = (e, 2)
    shapes["head_b"] = (2,)
    return shapes


def init_params(arch: Architecture, normalizers: Normalizers, seed: int = 0) -> RefinerParams:
    """Seeded Glorot-uniform weights; the output head is shrunk so the
    initial offsets start near zero (refinement begins at q_init)."""
    rng = np.random.default_rng(seed)
    values: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(arch).items():
        if name.endswith("_b") or "_b1" in name or "_b2" in name or name.endswith("ln1_b") or name.endswith("ln2_b"):
            values[name] = np.zeros(shape)
        elif name.endswith("ln1_g") or name.endswith("ln2_g"):
            values[name] = np.ones(shape)
        else:
            fan_in, fan_out = shape[0], shape[-1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            values[name] = rng.uniform(-bound, bound, size=shape)
    values["head_w"] *= 0.1
    return RefinerParams(values=values, arch=arch, normalizers=normalizers)


# ---------------------------------------------------------------------------
# Forward / backward


def _layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    mu = x.mean(axis=1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=1, keepdims=True)
    return d / (var + 1e-6) ** 0.5 * g + b


def _attention(x: Tensor, p: dict[str, Tensor], i: int, heads: int) -> Tensor:
    q = x @ p[f"enc_{i}_wq"]
    k = x @ p[f"enc_{i}_wk"]
    v = x @ p[f"enc_{i}_wv"]
    width = q.shape[1]
    dh = width // heads
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = q.slice_cols(lo, hi), k.slice_cols(lo, hi), v.slice_cols(lo, hi)
        scores = (qh @ kh.T) * (1.0 / np.sqrt(dh))
        outs.append(softmax_rows(scores) @ vh)
    return concat(outs, axis=1) @ p[f"enc_{i}_wo"]


def _interp_rows(x: Tensor, n_out: int) -> Tensor:
    """Stride-2 linear upsampling along the sorted row axis."""
    j = np.arange(n_out)
    k0 = np.minimum(j // 2, x.shape[0] - 1)
    k1 = np.minimum(k0 + 1, x.shape[0] - 1)
    t = (j % 2) * 0.5
    return x.take_rows(k0) * (1.0 - t)[:, None] + x.take_rows(k1) * t[:, None]


def _embed_and_propagate(pt: dict[str, Tensor], pack: FeaturePack, arch: Architecture) -> Tensor:
    blocks = []
    for name in FEATURE_ORDER:
        x = Tensor(pack.feature(name))
        h = ((x @ pt[f"embed_{name}_w1"] + pt[f"embed_{name}_b1"]).relu()
             @ pt[f"embed_{name}_w2"] + pt[f"embed_{name}_b2"])
        blocks.append(h + x @ pt[f"embed_{name}_res_w"])
    h = concat(blocks, axis=1)
    adj = Tensor(pack.adjacency)
    for i in range(arch.sage_layers):
        h = (h @ pt[f"sage_{i}_self_w"] + (adj @ h) @ pt[f"sage_{i}_neigh_w"]
             + pt[f"sage_{i}_b"]).relu()
    return h


def forward_graph(params: RefinerParams, pack: FeaturePack,
                  stop_after: str | None = None):
    """Build the autodiff graph; returns (offsets_tensor, param_tensors).

    ``stop_after='graph'`` truncates after the embedding + graph-conv
    stages (used to verify permutation equivariance before the pyramid).
    Charts with fewer than 4 vertices skip the pyramid via a flagged
    direct path that reuses the final skip projection.
    """
    arch = params.arch
    pt = {name: Tensor(v) for name, v in params.values.items()}
    h = _embed_and_propagate(pt, pack, arch)
    if stop_after == "graph":
        return h, pt

    for i in range(arch.enc_layers):
        attn_in = _layer_norm(h, pt[f"enc_{i}_ln1_g"], pt[f"enc_{i}_ln1_b"])
        h = h + _attention(attn_in, pt, i, arch.enc_heads)
        ffn_in = _layer_norm(h, pt[f"enc_{i}_ln2_g"], pt[f"enc_{i}_ln2_b"])
        h = h + ((ffn_in @ pt[f"enc_{i}_ffn_w1"] + pt[f"enc_{i}_ffn_b1"]).relu()
                 @ pt[f"enc_{i}_ffn_w2"] + pt[f"enc_{i}_ffn_b2"])

    n = pack.n
    if n < 4:
        logger.warning("chart with %d vertices: pyramid skipped (direct path)", n)
        f0 = (concat([h, h], axis=1) @ pt["pyr_up0_w"] + pt["pyr_up0_b"]).relu()
        out = (f0 @ pt["head_w"] + pt["head_b"]).tanh()
        return out, pt

    d0 = h.take_rows(pack.order)
    e1 = (d0.take_rows(np.arange(0, n, 2)) @ pt["pyr_down1_w"] + pt["pyr_down1_b"]).relu()
    n1 = e1.shape[0]
    e2 = (e1.take_rows(np.arange(0, n1, 2)) @ pt["pyr_down2_w"] + pt["pyr_down2_b"]).relu()
    u1 = _interp_rows(e2, n1)
    f1 = (concat([u1, e1], axis=1) @ pt["pyr_up1_w"] + pt["pyr_up1_b"]).relu()
    u0 = _interp_rows(f1, n)
    f0 = (concat([u0, d0], axis=1) @ pt["pyr_up0_w"] + pt["pyr_up0_b"]).relu()
    out_sorted = (f0 @ pt["head_w"] + pt["head_b"]).tanh()
    out = out_sorted.take_rows(pack.inverse_order)
    return out, pt


def forward(params: RefinerParams, pack: FeaturePack) -> np.ndarray:
    """Predicted per-vertex offsets, each component in (-1, 1)."""
    offsets, _ = forward_graph(params, pack)
    return offsets.data


def backward(params: RefinerParams, pack: FeaturePack,
             loss_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for a given d(loss)/d(uv) seed.

    Because the refined map is q_init + offsets, the seed w.r.t. the
    predicted uv applies to the offsets unchanged.
    """
    seed = np.asarray(getattr(loss_grad, "grad", loss_grad), dtype=np.float64)
    if not np.isfinite(seed).all():
        raise FloatingPointError("non-finite loss gradient")
    offsets, pt = forward_graph(params, pack)
    offsets.backward(seed.reshape(offsets.shape))
    return {name: (pt[name].grad if pt[name].grad is not None
                   else np.zeros_like(pt[name].data)) for name in sorted(pt)}
