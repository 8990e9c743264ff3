"""Scenario orchestration shared by the CLI and the acceptance suite:
dataset/model/role assembly from a config, run execution, and deterministic
result files.

Deterministic outputs (rounds.csv, rounds.json, final.json, entropy.csv,
stealth.csv) never contain timestamps; wall-clock data goes to metadata.json.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackerRole, apply_trigger, frame_mask_for_bandit, full_frame_mask
from .config import (
    AttackBlock,
    EvtfDataset,
    ExperimentConfig,
    SCHEMA_VERSION,
    SyntheticDataset,
)
from .data import (
    LabeledSample,
    PartitionConfig,
    generate_synthetic_dataset,
    partition,
    read_dataset,
)
from .errors import ConfigurationError
from .fl import FLConfig, RoundLog, run_federation
from .seeding import DATA, INIT, STRIP, derive_seed
from .snn import (
    TrainConfig,
    init_params,
    load_checkpoint,
    reference_model,
    save_checkpoint,
)
from .stealth import build_poisoned_batch, stealth_report
from .strip import StripConfig, evaluate_defense


@dataclass
class PreparedExperiment:
    train: list[LabeledSample]
    test: list[LabeledSample]
    num_classes: int
    model: object
    fl_config: FLConfig
    device_indices: list[np.ndarray]
    roles: dict[int, AttackerRole | None]
    trigger: object | None
    initial_params: object


@dataclass
class ExperimentResult:
    final_params: object
    logs: list[RoundLog]
    clean_accuracy: float
    asr: float | None


def build_datasets(cfg: ExperimentConfig) -> tuple[list[LabeledSample], list[LabeledSample], int]:
    if isinstance(cfg.dataset, SyntheticDataset):
        ds = cfg.dataset
        train = generate_synthetic_dataset(
            ds.classes, ds.per_class, ds.shape, derive_seed(cfg.seed, DATA, 0)
        )
        test = generate_synthetic_dataset(
            ds.classes, ds.test_per_class, ds.shape, derive_seed(cfg.seed, DATA, 1)
        )
        return train, test, ds.classes
    assert isinstance(cfg.dataset, EvtfDataset)
    train = read_dataset(cfg.dataset.train)
    test = read_dataset(cfg.dataset.test)
    if not train or not test:
        raise ConfigurationError("EVTF train and test sets must be non-empty")
    num_classes = max(s.label for s in train + test) + 1
    if num_classes < 2:
        raise ConfigurationError("datasets must contain at least two classes")
    return train, test, num_classes


def build_roles(cfg: ExperimentConfig, num_frames: int, num_classes: int):
    roles: dict[int, AttackerRole | None] = {d: None for d in range(cfg.fl.num_devices)}
    if cfg.attack is None:
        return roles, None
    atk: AttackBlock = cfg.attack
    if atk.target_label >= num_classes:
        raise ConfigurationError(
            f"attack.target_label {atk.target_label} outside {num_classes} classes"
        )
    gamma = 1.0
    if atk.gamma_mode == "n_over_nhat":
        gamma = cfg.fl.num_devices / atk.num_attackers
    elif atk.gamma_mode == "fixed":
        gamma = atk.gamma
    for i in range(atk.num_attackers):
        mask = (
            frame_mask_for_bandit(i + 1, atk.num_attackers, num_frames)
            if atk.num_attackers > 1
            else full_frame_mask(num_frames)
        )
        roles[i] = AttackerRole(
            target_label=atk.target_label,
            poison_rate=atk.epsilon,
            frame_mask=mask,
            gamma=max(gamma, 1.0),
        )
    return roles, atk.trigger


def prepare(cfg: ExperimentConfig) -> PreparedExperiment:
    train, test, num_classes = build_datasets(cfg)
    shape = train[0].frames.shape
    model = reference_model(
        shape[1:], num_classes, channels=cfg.model.channels, voting_group=cfg.model.voting_group
    )
    device_indices = partition(
        train,
        PartitionConfig(
            num_devices=cfg.fl.num_devices,
            non_iid_degree=cfg.fl.non_iid_degree,
            seed=derive_seed(cfg.seed, DATA, 2),
        ),
    )
    roles, trigger = build_roles(cfg, shape[0], num_classes)
    fl_config = FLConfig(
        num_devices=cfg.fl.num_devices,
        selection_fraction=cfg.fl.selection_fraction,
        rounds=cfg.fl.rounds,
        local=TrainConfig(
            epochs=cfg.fl.local.epochs,
            batch_size=cfg.fl.local.batch_size,
            learning_rate=cfg.fl.local.learning_rate,
            optimizer=cfg.fl.local.optimizer,
            seed=cfg.seed,
        ),
        seed=cfg.seed,
    )
    initial_params = init_params(model, derive_seed(cfg.seed, INIT))
    return PreparedExperiment(
        train=train,
        test=test,
        num_classes=num_classes,
        model=model,
        fl_config=fl_config,
        device_indices=device_indices,
        roles=roles,
        trigger=trigger,
        initial_params=initial_params,
    )


def run_experiment(
    cfg: ExperimentConfig, out_dir: Path | None = None, threads: int = 1
) -> ExperimentResult:
    """Execute the configured federation; write result files when
    ``out_dir`` is given."""
    prep = prepare(cfg)
    started = time.time()

    checkpoint_dir = None
    on_round = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.fl.checkpoint_every > 0:
            checkpoint_dir = out_dir / "checkpoints"
            checkpoint_dir.mkdir(exist_ok=True)

            def on_round(log: RoundLog, params):
                if (log.round_index + 1) % cfg.fl.checkpoint_every == 0:
                    save_checkpoint(params, checkpoint_dir / f"round_{log.round_index:04d}.ckpt")

    final_params, logs = run_federation(
        prep.model,
        prep.fl_config,
        prep.train,
        prep.device_indices,
        prep.roles,
        prep.initial_params,
        prep.test,
        trigger=prep.trigger,
        threads=threads,
        on_round=on_round,
    )
    result = ExperimentResult(
        final_params=final_params,
        logs=logs,
        clean_accuracy=logs[-1].clean_accuracy,
        asr=logs[-1].asr,
    )
    if out_dir is not None:
        _write_round_files(cfg, prep, result, out_dir)
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        save_checkpoint(final_params, ckpt_dir / "final.ckpt")
        _write_metadata(out_dir, started)
    return result


def _write_round_files(cfg, prep: PreparedExperiment, result: ExperimentResult, out_dir: Path):
    with open(out_dir / "rounds.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["round", "selected", "clean_accuracy", "asr", "mean_local_loss",
             "attacker_selected", "scaled"]
        )
        for log in result.logs:
            losses = list(log.per_device_loss.values())
            writer.writerow(
                [
                    log.round_index,
                    ";".join(str(d) for d in log.selected),
                    repr(log.clean_accuracy),
                    "" if log.asr is None else repr(log.asr),
                    repr(float(np.mean(losses))),
                    int(log.attacker_selected),
                    int(log.scaled),
                ]
            )

    train_cfg = prep.fl_config.local
    rounds_doc = {
        "schema_version": SCHEMA_VERSION,
        "train_config": {
            "epochs": train_cfg.epochs,
            "batch_size": train_cfg.batch_size,
            "learning_rate": train_cfg.learning_rate,
            "optimizer": train_cfg.optimizer,
        },
        "rounds": [log.to_dict() for log in result.logs],
    }
    with open(out_dir / "rounds.json", "w") as fh:
        json.dump(rounds_doc, fh, indent=2, sort_keys=True)

    times_selected = {d: 0 for d in range(cfg.fl.num_devices)}
    for log in result.logs:
        for d in log.selected:
            times_selected[d] += 1
    final_doc = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "rounds": cfg.fl.rounds,
        "num_devices": cfg.fl.num_devices,
        "selection_fraction": cfg.fl.selection_fraction,
        "selected_per_round": prep.fl_config.selected_per_round,
        "non_iid_degree": cfg.fl.non_iid_degree,
        "clean_accuracy": result.clean_accuracy,
        "train_config": rounds_doc["train_config"],
        "per_device": {
            str(d): {
                "samples": int(len(prep.device_indices[d])),
                "times_selected": times_selected[d],
                "attacker": prep.roles[d] is not None,
            }
            for d in range(cfg.fl.num_devices)
        },
    }
    if result.asr is not None:
        final_doc["asr"] = result.asr
        final_doc["attack"] = {
            "num_attackers": cfg.attack.num_attackers,
            "target_label": cfg.attack.target_label,
            "epsilon": cfg.attack.epsilon,
            "gamma_mode": cfg.attack.gamma_mode,
        }
    with open(out_dir / "final.json", "w") as fh:
        json.dump(final_doc, fh, indent=2, sort_keys=True)


def _write_metadata(out_dir: Path, started: float):
    meta = {
        "package_version": __version__,
        "started_unix": started,
        "finished_unix": time.time(),
        "duration_seconds": time.time() - started,
    }
    with open(out_dir / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def run_strip(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Score a trained checkpoint: entropy CSV plus a summary of the fitted
    boundary and the observed error rates."""
    if cfg.strip is None or cfg.attack is None:
        raise ConfigurationError("strip command needs both strip and attack blocks")
    if cfg.strip.checkpoint is None or not Path(cfg.strip.checkpoint).is_file():
        raise ConfigurationError(f"missing checkpoint: {cfg.strip.checkpoint}")
    started = time.time()
    train, test, num_classes = build_datasets(cfg)
    shape = train[0].frames.shape
    model = reference_model(
        shape[1:], num_classes, channels=cfg.model.channels, voting_group=cfg.model.voting_group
    )
    params = load_checkpoint(cfg.strip.checkpoint)

    target = cfg.attack.target_label
    trigger = cfg.attack.trigger
    clean = test[: cfg.strip.max_samples]
    mask = full_frame_mask(shape[0])
    victims = [s for s in test if s.label != target][: cfg.strip.max_samples]
    poisoned = [
        LabeledSample(frames=apply_trigger(s.frames, trigger, mask), label=target)
        for s in victims
    ]
    strip_cfg = StripConfig(
        num_overlays=cfg.strip.num_overlays,
        target_frr=cfg.strip.target_frr,
        seed=derive_seed(cfg.seed, STRIP),
    )
    report = evaluate_defense(model, params, clean, poisoned, strip_cfg)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "entropy.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "set", "entropy"])
        for sample_id, kind, entropy in report.csv_rows():
            writer.writerow([sample_id, kind, repr(entropy)])
    summary = {
        "schema_version": SCHEMA_VERSION,
        "mu": report.mu,
        "sigma": report.sigma,
        "boundary": report.boundary,
        "far": report.far,
        "frr": report.frr,
        "target_frr": cfg.strip.target_frr,
        "num_overlays": cfg.strip.num_overlays,
        "num_clean": len(clean),
        "num_poisoned": len(poisoned),
    }
    with open(out_dir / "strip_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _write_metadata(out_dir, started)
    return summary


def run_stealth(cfg: ExperimentConfig, out_dir: Path):
    """Stealth metric rows over the configured attacker counts."""
    if cfg.stealth is None or cfg.attack is None:
        raise ConfigurationError("stealth command needs both stealth and attack blocks")
    started = time.time()
    _, test, _ = build_datasets(cfg)
    if not test:
        raise ConfigurationError("no clean samples available for the stealth batch")
    batch = test[: cfg.stealth.batch_size]
    trigger = cfg.attack.trigger
    num_frames = batch[0].frames.shape[0]
    for count in cfg.stealth.attacker_counts:
        if count > num_frames:
            raise ConfigurationError(
                f"stealth.attacker_counts: {count} attackers cannot split {num_frames} frames"
            )
    poisoned = {
        count: build_poisoned_batch(batch, count, trigger)
        for count in cfg.stealth.attacker_counts
    }
    report = stealth_report(batch, poisoned, trigger)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "stealth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attacker_count", "mse_raw", "mse_x1000", "ssim", "ssim_x100"])
        for count, mse_raw, mse_scaled, ssim, ssim_scaled in report.csv_rows():
            writer.writerow([count, repr(mse_raw), repr(mse_scaled), repr(ssim), repr(ssim_scaled)])
    _write_metadata(out_dir, started)
    return report
