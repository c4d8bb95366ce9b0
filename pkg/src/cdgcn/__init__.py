"""Spatiotemporal signal recovery with a compact tensor graph convolution.

The model is a graph convolution over M-products of third-order
``(station, feature, time)`` tensors, trained with a Huber loss plus a
temporal smoothness penalty.
"""
__version__ = "0.1.0"

from .tensor_core import (MixingMatrix, SizeError, build_banded_mean, facewise_product,
                          frobenius_norm, m_product, m_transform, m_transform_inverse)
from .graph import Station, StationGraph, build_graph
from .dataset import MaskedDataset, apply_missing, generate_synthetic
from .model import ModelParams, backward, forward, init_params
from .objective import ObjectiveConfig, huber_loss, objective, smoothness_penalty
from .metrics import baseline_locf, baseline_mean, rmse, rse
from .trainer import TrainConfig, ablate, recover, run, train

__all__ = [
    "MixingMatrix", "SizeError", "build_banded_mean", "facewise_product", "frobenius_norm",
    "m_product", "m_transform", "m_transform_inverse", "Station", "StationGraph",
    "build_graph", "MaskedDataset", "apply_missing", "generate_synthetic", "ModelParams",
    "backward", "forward", "init_params", "ObjectiveConfig", "huber_loss", "objective",
    "smoothness_penalty", "baseline_locf", "baseline_mean", "rmse", "rse", "TrainConfig",
    "ablate", "recover", "run", "train",
]
