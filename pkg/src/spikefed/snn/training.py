"""Local training and evaluation on top of the network engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, NumericError, TrainingError
from .engine import Network, softmax_probs
from .model import ModelSpec, ParamVector

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_EVAL_BATCH = 256


@dataclass(frozen=True)
class TrainConfig:
    """Local optimization settings. ``batch_size=None`` means full batch."""

    epochs: int = 1
    batch_size: int | None = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, values: np.ndarray, grad: np.ndarray) -> None:
        values -= self.lr * grad


class _Adam:
    def __init__(self, lr: float, size: int, dtype):
        self.lr = lr
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0

    def step(self, values: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1.0 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1.0 - ADAM_BETA2) * grad * grad
        m_hat = self.m / (1.0 - ADAM_BETA1**self.t)
        v_hat = self.v / (1.0 - ADAM_BETA2**self.t)
        values -= self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _stack(data) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.frames for s in data])
    y = np.array([s.label for s in data], dtype=np.int64)
    return x, y


def forward(model: ModelSpec, params: ParamVector, x: np.ndarray, train: bool = False):
    """Single-sample forward pass: (logits of length C, spike record).

    The spike record maps lif layer indices to their (T, ...) spike output.
    """
    net = Network(model, params.copy() if train else params)
    logits, record = net.forward_batch(
        np.asarray(x)[None], train=train, record_spikes=True
    )
    return logits[0], {k: v[0] for k, v in record.items()}


def backward(
    model: ModelSpec,
    params: ParamVector,
    batch,
    smooth_spikes: bool = False,
    rng: np.random.Generator | None = None,
) -> ParamVector:
    """Gradient of mean cross-entropy over the batch.

    Runs in training mode on a private parameter copy, so caller state is
    never touched. ``smooth_spikes`` swaps the hard threshold for the
    surrogate sigmoid in the forward (the reset gate stays hard), which is
    what finite-difference verification differentiates.
    """
    if not batch:
        raise ConfigurationError("backward needs a non-empty batch")
    x, y = _stack(batch)
    net = Network(model, params.copy())
    _, grad = net.loss_and_grad(x, y, train=True, rng=rng, smooth=smooth_spikes)
    return grad


def batch_loss(
    model: ModelSpec,
    params: ParamVector,
    batch,
    smooth_spikes: bool = False,
) -> float:
    """Training-mode mean cross-entropy; the loss that ``backward`` differentiates."""
    if not batch:
        raise ConfigurationError("batch_loss needs a non-empty batch")
    x, y = _stack(batch)
    net = Network(model, params.copy())
    return net.batch_loss(x, y, train=True, smooth=smooth_spikes)


def train_local_stats(
    model: ModelSpec, params: ParamVector, data, cfg: TrainConfig
) -> tuple[ParamVector, list[float]]:
    """As :func:`train_local`, also returning the per-batch loss history."""
    if not data:
        raise ConfigurationError("train_local needs non-empty data")
    x_all, y_all = _stack(data)
    work = params.copy()
    net = Network(model, work)
    if cfg.optimizer == "sgd":
        opt = _Sgd(cfg.learning_rate)
    else:
        opt = _Adam(cfg.learning_rate, len(work), work.values.dtype)
    rng = np.random.default_rng(cfg.seed)
    batch = cfg.batch_size or len(data)

    losses: list[float] = []
    last_finite: float | None = None
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), batch):
            idx = order[start : start + batch]
            try:
                loss, grad = net.loss_and_grad(x_all[idx], y_all[idx], train=True, rng=rng)
            except NumericError as exc:
                raise TrainingError(f"training diverged: {exc}", last_finite) from exc
            opt.step(work.values, grad.values)
            losses.append(loss)
            last_finite = loss
    return work, losses


def train_local(model: ModelSpec, params: ParamVector, data, cfg: TrainConfig) -> ParamVector:
    """Mini-batch optimization for ``cfg.epochs`` epochs; input params are
    left unmodified. Shuffling and dropout masks derive from ``cfg.seed``."""
    updated, _ = train_local_stats(model, params, data, cfg)
    return updated


def predict_labels(model: ModelSpec, params: ParamVector, frames: np.ndarray) -> np.ndarray:
    """Argmax class per sample for a (B,T,P,H,W) batch; ties go to the
    lowest class index."""
    net = Network(model, params)
    preds = []
    for start in range(0, len(frames), _EVAL_BATCH):
        logits = net.forward_batch(frames[start : start + _EVAL_BATCH])
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds)


def predict_proba(model: ModelSpec, params: ParamVector, frames: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for a (B,T,P,H,W) batch."""
    net = Network(model, params)
    out = []
    for start in range(0, len(frames), _EVAL_BATCH):
        logits = net.forward_batch(frames[start : start + _EVAL_BATCH])
        out.append(softmax_probs(logits))
    return np.concatenate(out)


def evaluate_accuracy(model: ModelSpec, params: ParamVector, data) -> float:
    """Fraction of samples whose argmax logit equals the label."""
    if not data:
        raise ConfigurationError("evaluate_accuracy needs non-empty data")
    x, y = _stack(data)
    return float(np.mean(predict_labels(model, params, x) == y))
