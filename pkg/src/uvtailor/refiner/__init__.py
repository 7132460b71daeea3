"""Offset-predicting UV refiner: network, training loop, synthetic data,
and a reference-free direct optimizer."""

from .network import (
    Architecture,
    FeaturePack,
    Normalizers,
    RefinerParams,
    backward,
    build_feature_pack,
    fit_normalizers,
    forward,
    forward_graph,
    init_params,
    scaled_architecture,
)
from .training import (
    TrainConfig,
    TrainSample,
    load_checkpoint,
    prepare_sample,
    save_checkpoint,
    save_history_csv,
    train,
)
from .synthetic import make_synthetic_pair
from .direct import direct_refine

__all__ = [
    "Architecture",
    "FeaturePack",
    "Normalizers",
    "RefinerParams",
    "TrainConfig",
    "TrainSample",
    "backward",
    "build_feature_pack",
    "direct_refine",
    "fit_normalizers",
    "forward",
    "forward_graph",
    "init_params",
    "load_checkpoint",
    "make_synthetic_pair",
    "prepare_sample",
    "save_checkpoint",
    "save_history_csv",
    "scaled_architecture",
    "train",
]
