"""Backdoor machinery: trigger construction and injection, shard poisoning,
update scaling, temporal trigger splitting across attackers, and attack
success evaluation.

Attackers never share state; coordination exists only in the static
assignment of frame blocks. At test time the trigger always covers every
frame, regardless of how it was split during training.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledSample
from .errors import ConfigurationError, EvaluationError
from .seeding import ATTACK, derive_seed
from .snn.model import ModelSpec, ParamVector
from .snn.training import TrainConfig, predict_labels, train_local_stats


@dataclass(frozen=True)
class TriggerSpec:
    """Square patch in the top-left corner: ``polarity_channel`` set to
    ``value`` and all other channels zeroed inside the patch. The side is
    floor(sqrt(area_fraction * H * W))."""

    area_fraction: float = 0.30
    polarity_channel: int = 1
    value: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.area_fraction < 1.0:
            raise ConfigurationError(
                f"area_fraction must be in (0,1), got {self.area_fraction}"
            )
        if self.polarity_channel < 0:
            raise ConfigurationError("polarity_channel must be >= 0")

    def side(self, height: int, width: int) -> int:
        side = math.floor(math.sqrt(self.area_fraction * height * width))
        if side < 1:
            raise ConfigurationError(
                f"trigger area {self.area_fraction} on {height}x{width} gives side 0"
            )
        return side


@dataclass(frozen=True)
class AttackerRole:
    """One malicious device: relabels a ``poison_rate`` fraction of its shard
    to ``target_label`` with the trigger stamped on its ``frame_mask``, then
    scales its update delta by ``gamma``."""

    target_label: int
    poison_rate: float = 0.1
    frame_mask: np.ndarray = field(default_factory=lambda: np.ones(1, dtype=bool))
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.poison_rate <= 1.0:
            raise ConfigurationError(f"poison_rate must be in (0,1], got {self.poison_rate}")
        if self.gamma < 1.0:
            raise ConfigurationError(f"gamma must be >= 1, got {self.gamma}")
        mask = np.asarray(self.frame_mask, dtype=bool)
        if mask.ndim != 1 or not mask.any():
            raise ConfigurationError("frame_mask must be 1-D with at least one frame set")
        object.__setattr__(self, "frame_mask", mask)


def full_frame_mask(num_frames: int) -> np.ndarray:
    return np.ones(num_frames, dtype=bool)


def frame_mask_for_bandit(i: int, num_attackers: int, num_frames: int) -> np.ndarray:
    """Contiguous frame block for attacker ``i`` (1-based) of ``num_attackers``.

    Blocks are disjoint and cover all frames; when the frame count does not
    divide evenly, the first ``num_frames % num_attackers`` attackers take
    one extra frame.
    """
    if num_attackers < 1 or not 1 <= i <= num_attackers:
        raise ConfigurationError(f"attacker index {i} outside 1..{num_attackers}")
    if num_attackers > num_frames:
        raise ConfigurationError(
            f"{num_attackers} attackers cannot split {num_frames} frames"
        )
    base, extra = divmod(num_frames, num_attackers)
    start = (i - 1) * base + min(i - 1, extra)
    stop = start + base + (1 if i <= extra else 0)
    mask = np.zeros(num_frames, dtype=bool)
    mask[start:stop] = True
    return mask


def apply_trigger(x: np.ndarray, trig: TriggerSpec, mask: np.ndarray) -> np.ndarray:
    """Stamp the trigger onto the masked frames of a copy of ``x``."""
    t, p, h, w = x.shape
    if trig.polarity_channel >= p:
        raise ConfigurationError(
            f"polarity channel {trig.polarity_channel} outside {p} channels"
        )
    side = trig.side(h, w)
    if side > min(h, w):
        raise ConfigurationError(f"trigger side {side} exceeds frame size {h}x{w}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t,):
        raise ConfigurationError(f"frame mask length {mask.shape} != frame count {t}")
    out = np.array(x, copy=True)
    out[mask, :, :side, :side] = 0.0
    out[mask, trig.polarity_channel, :side, :side] = trig.value
    out.setflags(write=False)
    return out


def poison_shard(
    shard: list[LabeledSample], role: AttackerRole, trig: TriggerSpec, seed: int
) -> list[LabeledSample]:
    """Replace round(poison_rate * len(shard)) seeded-uniform samples with
    their triggered, relabeled versions. Shard size is preserved."""
    if not shard:
        raise ConfigurationError("cannot poison an empty shard")
    count = int(np.floor(role.poison_rate * len(shard) + 0.5))
    if count == 0:
        warnings.warn(
            f"poison rate {role.poison_rate} selects 0 of {len(shard)} samples; "
            "shard returned unchanged",
            stacklevel=2,
        )
        return list(shard)
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(shard), size=count, replace=False).tolist())
    out = []
    for idx, sample in enumerate(shard):
        if idx in chosen:
            out.append(
                LabeledSample(
                    frames=apply_trigger(sample.frames, trig, role.frame_mask),
                    label=role.target_label,
                )
            )
        else:
            out.append(sample)
    return out


def scale_update(global_params: ParamVector, local_params: ParamVector, gamma: float) -> ParamVector:
    """Amplified update: global + gamma * (local - global) on trainable
    entries.

    gamma=1 returns the local update unchanged; the delta form keeps large
    gamma from destroying the model the way whole-vector scaling would.
    Batch-norm statistics are transmitted as-is: they are measurements, and
    extrapolating them produces invalid state (negative variances).
    """
    if not global_params.same_layout(local_params):
        raise ConfigurationError("cannot scale updates with mismatched layouts")
    if gamma < 1.0:
        raise ConfigurationError(f"gamma must be >= 1, got {gamma}")
    if gamma == 1.0:
        return local_params.copy()
    g64 = global_params.values.astype(np.float64)
    l64 = local_params.values.astype(np.float64)
    scaled = g64 + gamma * (l64 - g64)
    out = ParamVector(scaled.astype(global_params.values.dtype), global_params.layout)
    for entry in global_params.layout:
        if not entry.trainable:
            out.view(entry.name)[...] = local_params.view(entry.name)
    return out


def local_malicious_update_stats(
    model: ModelSpec,
    global_params: ParamVector,
    shard: list[LabeledSample],
    role: AttackerRole,
    trig: TriggerSpec,
    train_cfg: TrainConfig,
) -> tuple[ParamVector, list[float]]:
    """As :func:`local_malicious_update`, also returning the per-batch loss
    history of the poisoned training run."""
    poison_seed = derive_seed(train_cfg.seed, ATTACK)
    poisoned = poison_shard(shard, role, trig, poison_seed)
    local, losses = train_local_stats(model, global_params, poisoned, train_cfg)
    return scale_update(global_params, local, role.gamma), losses


def local_malicious_update(
    model: ModelSpec,
    global_params: ParamVector,
    shard: list[LabeledSample],
    role: AttackerRole,
    trig: TriggerSpec,
    train_cfg: TrainConfig,
) -> ParamVector:
    """Train on the poisoned shard starting from the global parameters, then
    scale the resulting update delta by the role's gamma."""
    updated, _ = local_malicious_update_stats(model, global_params, shard, role, trig, train_cfg)
    return updated


def evaluate_asr(
    model: ModelSpec,
    params: ParamVector,
    clean_test: list[LabeledSample],
    trig: TriggerSpec,
    target_label: int,
) -> float:
    """Attack success rate: fraction of non-target test samples classified as
    the target after stamping the trigger on every frame."""
    if not clean_test:
        raise ConfigurationError("evaluate_asr needs a non-empty test set")
    victims = [s for s in clean_test if s.label != target_label]
    if not victims:
        raise EvaluationError("every test sample already has the target label")
    num_frames = victims[0].frames.shape[0]
    mask = full_frame_mask(num_frames)
    triggered = np.stack([apply_trigger(s.frames, trig, mask) for s in victims])
    preds = predict_labels(model, params, triggered)
    return float(np.mean(preds == target_label))
