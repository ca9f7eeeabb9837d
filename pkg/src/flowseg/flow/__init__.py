"""Coupling-flow density estimation: model, exact gradients, training."""

from .coupling import AffineCoupling
from .model import (
    FlowModel,
    coupling_mask,
    gradients,
    init_model,
    load_model,
    save_model,
)
from .nets import Mlp
from .train import Adam, EpochRecord, TrainConfig, TrainingLog, train

__all__ = [
    "AffineCoupling",
    "Adam",
    "EpochRecord",
    "FlowModel",
    "Mlp",
    "TrainConfig",
    "TrainingLog",
    "coupling_mask",
    "gradients",
    "init_model",
    "load_model",
    "save_model",
    "train",
]
