"""Synchronous federated rounds: device sampling, local updates (benign or
malicious), unweighted-mean aggregation, and per-round audit logging.

Everything is derived from one seed through counter-based sub-seeds keyed by
(component, round, device), so runs are reproducible regardless of how many
worker threads execute the local updates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import (
    AttackerRole,
    TriggerSpec,
    apply_trigger,
    full_frame_mask,
    local_malicious_update_stats,
)
from .data import LabeledSample
from .errors import AggregationError, ConfigurationError, FederationError
from .seeding import LOCAL_TRAIN, SELECTION, derive_rng, derive_seed
from .snn.model import ModelSpec, ParamVector
from .snn.training import TrainConfig, predict_labels, train_local_stats


@dataclass(frozen=True)
class FLConfig:
    num_devices: int
    selection_fraction: float = 1.0
    rounds: int = 1
    local: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.num_devices < 1:
            raise ConfigurationError(f"num_devices must be >= 1, got {self.num_devices}")
        if not 0.0 < self.selection_fraction <= 1.0:
            raise ConfigurationError(
                f"selection_fraction must be in (0,1], got {self.selection_fraction}"
            )
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {self.rounds}")

    @property
    def selected_per_round(self) -> int:
        return max(1, int(np.floor(self.selection_fraction * self.num_devices + 0.5)))


@dataclass(frozen=True)
class RoundLog:
    """Audit record for one aggregation round."""

    round_index: int
    selected: tuple[int, ...]
    clean_accuracy: float
    asr: float | None
    per_device_loss: dict[int, float]
    attacker_selected: bool
    scaled: bool

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "selected": list(self.selected),
            "clean_accuracy": self.clean_accuracy,
            "asr": self.asr,
            "per_device_loss": {str(k): v for k, v in self.per_device_loss.items()},
            "attacker_selected": self.attacker_selected,
            "scaled": self.scaled,
        }


def select_devices(num_devices: int, fraction: float, round_seed: int) -> tuple[int, ...]:
    """Uniform sample without replacement of max(1, round(fraction * n)) ids."""
    if num_devices < 1:
        raise ConfigurationError("num_devices must be >= 1")
    count = max(1, int(np.floor(fraction * num_devices + 0.5)))
    rng = np.random.default_rng(round_seed)
    chosen = rng.choice(num_devices, size=count, replace=False)
    return tuple(sorted(int(i) for i in chosen))


def aggregate(updates: list[ParamVector]) -> ParamVector:
    """Element-wise unweighted mean of the updates.

    Accumulation runs in float64, which is exact for float32 inputs, so the
    result is independent of summation order.
    """
    if not updates:
        raise AggregationError("nothing to aggregate")
    base = updates[0]
    acc = np.zeros(base.values.shape, dtype=np.float64)
    for u in updates:
        if not base.same_layout(u):
            raise AggregationError("parameter layouts differ across updates")
        acc += u.values
    acc /= len(updates)
    return ParamVector(acc.astype(base.values.dtype), base.layout)


def run_federation(
    model: ModelSpec,
    cfg: FLConfig,
    samples: list[LabeledSample],
    device_indices: list[np.ndarray],
    roles: dict[int, AttackerRole | None],
    initial_params: ParamVector,
    clean_test: list[LabeledSample],
    trigger: TriggerSpec | None = None,
    threads: int = 1,
    on_round=None,
) -> tuple[ParamVector, list[RoundLog]]:
    """Run ``cfg.rounds`` synchronous rounds and evaluate after each one.

    ``roles`` maps every device id to None (benign) or an AttackerRole.
    Attack success is evaluated with the full-frame trigger whenever any
    attacker exists; ``trigger`` is then required. ``on_round`` is invoked
    with each RoundLog and the current global parameters as they are produced.
    """
    if len(device_indices) != cfg.num_devices:
        raise ConfigurationError(
            f"partition has {len(device_indices)} shards for {cfg.num_devices} devices"
        )
    attacker_ids = {d for d, r in roles.items() if r is not None}
    target_labels = {roles[d].target_label for d in attacker_ids}
    if attacker_ids:
        if trigger is None:
            raise ConfigurationError("attack roles present but no trigger given")
        if len(target_labels) != 1:
            raise ConfigurationError("all attackers must share one target label")
    target = target_labels.pop() if attacker_ids else None

    shards = [[samples[i] for i in idx] for idx in device_indices]
    global_params = initial_params.copy()
    logs: list[RoundLog] = []

    # Evaluation tensors are static across rounds; build them once.
    if not clean_test:
        raise ConfigurationError("clean_test must be non-empty")
    clean_x = np.stack([s.frames for s in clean_test])
    clean_y = np.array([s.label for s in clean_test], dtype=np.int64)
    triggered_x = None
    if attacker_ids:
        victims = [s for s in clean_test if s.label != target]
        if not victims:
            raise ConfigurationError("every test sample carries the target label")
        mask = full_frame_mask(victims[0].frames.shape[0])
        triggered_x = np.stack([apply_trigger(s.frames, trigger, mask) for s in victims])

    def local_update(round_index: int, device: int) -> tuple[int, ParamVector, float]:
        seed = derive_seed(cfg.seed, LOCAL_TRAIN, round_index, device)
        local_cfg = TrainConfig(
            epochs=cfg.local.epochs,
            batch_size=cfg.local.batch_size,
            learning_rate=cfg.local.learning_rate,
            optimizer=cfg.local.optimizer,
            seed=seed,
        )
        role = roles.get(device)
        try:
            if role is None:
                params, losses = train_local_stats(model, global_params, shards[device], local_cfg)
            else:
                params, losses = local_malicious_update_stats(
                    model, global_params, shards[device], role, trigger, local_cfg
                )
        except Exception as exc:
            raise FederationError(
                f"device {device} failed in round {round_index}: {exc}", round_index, device
            ) from exc
        return device, params, float(np.mean(losses))

    for t in range(cfg.rounds):
        selected = select_devices(
            cfg.num_devices, cfg.selection_fraction, derive_seed(cfg.seed, SELECTION, t)
        )
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda d: local_update(t, d), selected))
        else:
            results = [local_update(t, d) for d in selected]
        results.sort(key=lambda item: item[0])  # fixed summation order
        global_params = aggregate([p for _, p, _ in results])

        clean_acc = float(np.mean(predict_labels(model, global_params, clean_x) == clean_y))
        asr = None
        if attacker_ids:
            asr = float(np.mean(predict_labels(model, global_params, triggered_x) == target))
        selected_attackers = attacker_ids.intersection(selected)
        log = RoundLog(
            round_index=t,
            selected=selected,
            clean_accuracy=clean_acc,
            asr=asr,
            per_device_loss={d: loss for d, _, loss in results},
            attacker_selected=bool(selected_attackers),
            scaled=any(roles[d].gamma > 1.0 for d in selected_attackers),
        )
        logs.append(log)
        if on_round is not None:
            on_round(log, global_params)
    return global_params, logs
