"""Spiking network core: model specs, the execution engine, local training,
and parameter checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .engine import Network, lif_step, surrogate_derivative, surrogate_sigmoid
from .model import (
    BatchNorm,
    Conv2d,
    Dropout,
    LIF,
    LIFConfig,
    Linear,
    MaxPool2d,
    ModelSpec,
    ParamVector,
    SurrogateConfig,
    Voting,
    init_params,
    reference_model,
    zeros_like,
)
from .training import (
    TrainConfig,
    backward,
    batch_loss,
    evaluate_accuracy,
    forward,
    predict_labels,
    predict_proba,
    train_local,
    train_local_stats,
)

__all__ = [
    "BatchNorm",
    "Conv2d",
    "Dropout",
    "LIF",
    "LIFConfig",
    "Linear",
    "MaxPool2d",
    "ModelSpec",
    "Network",
    "ParamVector",
    "SurrogateConfig",
    "TrainConfig",
    "Voting",
    "backward",
    "batch_loss",
    "evaluate_accuracy",
    "forward",
    "init_params",
    "lif_step",
    "load_checkpoint",
    "predict_labels",
    "predict_proba",
    "reference_model",
    "save_checkpoint",
    "surrogate_derivative",
    "surrogate_sigmoid",
    "train_local",
    "train_local_stats",
    "zeros_like",
]
