"""Experiment configuration: JSON schema, total validation, and typed blocks.

Validation is exhaustive: every invalid field is collected and reported in
one error before any work starts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .attack import TriggerSpec
from .errors import ConfigurationError

SEED_ENV_VAR = "SPIKEFED_SEED"
SCHEMA_VERSION = 1

GAMMA_MODES = ("none", "n_over_nhat", "fixed")


@dataclass(frozen=True)
class SyntheticDataset:
    classes: int = 10
    per_class: int = 100
    shape: tuple[int, int, int, int] = (16, 2, 16, 16)
    test_per_class: int = 20


@dataclass(frozen=True)
class EvtfDataset:
    train: Path = Path()
    test: Path = Path()


@dataclass(frozen=True)
class ModelBlock:
    name: str = "reference"
    channels: int = 8
    voting_group: int = 1


@dataclass(frozen=True)
class LocalBlock:
    epochs: int = 2
    batch_size: int = 8
    learning_rate: float = 5e-3
    optimizer: str = "adam"


@dataclass(frozen=True)
class FLBlock:
    num_devices: int = 10
    selection_fraction: float = 1.0
    rounds: int = 20
    non_iid_degree: float = 0.0
    checkpoint_every: int = 0
    local: LocalBlock = field(default_factory=LocalBlock)


@dataclass(frozen=True)
class AttackBlock:
    num_attackers: int = 1
    target_label: int = 0
    epsilon: float = 0.1
    gamma_mode: str = "n_over_nhat"
    gamma: float | None = None  # required iff gamma_mode == "fixed"
    trigger: TriggerSpec = field(default_factory=TriggerSpec)


@dataclass(frozen=True)
class StripBlock:
    num_overlays: int = 64
    target_frr: float = 0.01
    checkpoint: Path | None = None
    max_samples: int = 200


@dataclass(frozen=True)
class StealthBlock:
    attacker_counts: tuple[int, ...] = (1, 2, 4, 8)
    batch_size: int = 16


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: Path | None = None
    dataset: SyntheticDataset | EvtfDataset = field(default_factory=SyntheticDataset)
    model: ModelBlock = field(default_factory=ModelBlock)
    fl: FLBlock = field(default_factory=FLBlock)
    attack: AttackBlock | None = None
    strip: StripBlock | None = None
    stealth: StealthBlock | None = None


class _Checker:
    """Accumulates every validation problem instead of failing fast."""

    def __init__(self):
        self.errors: list[str] = []

    def fail(self, message: str):
        self.errors.append(message)

    def expect_int(self, raw, name, minimum=None, maximum=None, default=None):
        if raw is None:
            return default
        if not isinstance(raw, int) or isinstance(raw, bool):
            self.fail(f"{name}: expected an integer, got {raw!r}")
            return default
        if minimum is not None and raw < minimum:
            self.fail(f"{name}: must be >= {minimum}, got {raw}")
            return default
        if maximum is not None and raw > maximum:
            self.fail(f"{name}: must be <= {maximum}, got {raw}")
            return default
        return raw

    def expect_number(self, raw, name, low=None, high=None, default=None,
                      low_open=False, high_open=False):
        if raw is None:
            return default
        if not isinstance(raw, (int, float)) or isinstance(raw, bool):
            self.fail(f"{name}: expected a number, got {raw!r}")
            return default
        value = float(raw)
        if low is not None and (value < low or (low_open and value == low)):
            self.fail(f"{name}: must be {'>' if low_open else '>='} {low}, got {value}")
            return default
        if high is not None and (value > high or (high_open and value == high)):
            self.fail(f"{name}: must be {'<' if high_open else '<='} {high}, got {value}")
            return default
        return value

    def expect_choice(self, raw, name, choices, default=None):
        if raw is None:
            return default
        if raw not in choices:
            self.fail(f"{name}: must be one of {list(choices)}, got {raw!r}")
            return default
        return raw


def _parse_shape(raw, check: _Checker):
    if raw is None:
        return (16, 2, 16, 16)
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4 and
            all(isinstance(v, int) and not isinstance(v, bool) for v in raw)):
        check.fail(f"dataset.synthetic.shape: expected 4 integers [T,P,H,W], got {raw!r}")
        return (16, 2, 16, 16)
    t, p, h, w = raw
    if t < 1 or p not in (1, 2) or h < 4 or w < 4:
        check.fail(f"dataset.synthetic.shape: invalid shape {raw} (need T>=1, P in 1..2, H,W>=4)")
    return (t, p, h, w)


def _parse_dataset(raw, check: _Checker, base_dir: Path):
    if raw is None:
        check.fail("dataset: block is required")
        return SyntheticDataset()
    sources = [k for k in ("synthetic", "evtf") if k in raw]
    if len(sources) != 1:
        check.fail(f"dataset: exactly one of 'synthetic' or 'evtf' required, found {sources}")
        return SyntheticDataset()
    if sources[0] == "synthetic":
        block = raw["synthetic"] or {}
        return SyntheticDataset(
            classes=check.expect_int(block.get("classes"), "dataset.synthetic.classes", 2, default=10),
            per_class=check.expect_int(block.get("per_class"), "dataset.synthetic.per_class", 1, default=100),
            shape=_parse_shape(block.get("shape"), check),
            test_per_class=check.expect_int(
                block.get("test_per_class"), "dataset.synthetic.test_per_class", 1, default=20
            ),
        )
    block = raw["evtf"] or {}
    paths = {}
    for key in ("train", "test"):
        raw_path = block.get(key)
        if not isinstance(raw_path, str) or not raw_path:
            check.fail(f"dataset.evtf.{key}: path is required")
            paths[key] = Path()
            continue
        resolved = (base_dir / raw_path).resolve() if not os.path.isabs(raw_path) else Path(raw_path)
        if not resolved.is_file():
            check.fail(f"dataset.evtf.{key}: file does not exist: {resolved}")
        paths[key] = resolved
    return EvtfDataset(train=paths["train"], test=paths["test"])


def _parse_trigger(raw, check: _Checker) -> TriggerSpec:
    raw = raw or {}
    area = check.expect_number(raw.get("area_fraction"), "attack.trigger.area_fraction",
                               low=0.0, high=1.0, low_open=True, high_open=True, default=0.30)
    channel = check.expect_int(raw.get("polarity_channel"), "attack.trigger.polarity_channel",
                               0, default=1)
    value = check.expect_number(raw.get("value"), "attack.trigger.value", low=0.0, high=1.0,
                                default=1.0)
    try:
        return TriggerSpec(area_fraction=area, polarity_channel=channel, value=value)
    except ConfigurationError as exc:
        check.fail(f"attack.trigger: {exc}")
        return TriggerSpec()


def load_config(path, command: str = "run") -> ExperimentConfig:
    """Parse and fully validate a JSON config file for the given subcommand.

    The SPIKEFED_SEED environment variable, when set, overrides the config
    seed.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file does not exist: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    return validate_config(raw, base_dir=path.parent, command=command)


def validate_config(raw: dict, base_dir: Path, command: str = "run") -> ExperimentConfig:
    check = _Checker()
    known = {"seed", "output_dir", "dataset", "model", "fl", "attack", "strip", "stealth"}
    for key in raw:
        if key not in known:
            check.fail(f"unknown top-level key {key!r}")

    seed = check.expect_int(raw.get("seed"), "seed", default=0)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            check.fail(f"{SEED_ENV_VAR}: not an integer: {env_seed!r}")

    output_dir = raw.get("output_dir")
    if output_dir is not None:
        if not isinstance(output_dir, str) or not output_dir:
            check.fail(f"output_dir: expected a non-empty string, got {output_dir!r}")
            output_dir = None
        else:
            output_dir = Path(output_dir)
            if not output_dir.is_absolute():
                output_dir = base_dir / output_dir

    dataset = _parse_dataset(raw.get("dataset"), check, base_dir)

    model_raw = raw.get("model") or {}
    model = ModelBlock(
        name=check.expect_choice(model_raw.get("name"), "model.name", ("reference",),
                                 default="reference"),
        channels=check.expect_int(model_raw.get("channels"), "model.channels", 1, default=8),
        voting_group=check.expect_int(model_raw.get("voting_group"), "model.voting_group", 1,
                                      default=1),
    )

    fl_raw = raw.get("fl") or {}
    local_raw = fl_raw.get("local") or {}
    local = LocalBlock(
        epochs=check.expect_int(local_raw.get("epochs"), "fl.local.epochs", 1, default=2),
        batch_size=check.expect_int(local_raw.get("batch_size"), "fl.local.batch_size", 1, default=8),
        learning_rate=check.expect_number(local_raw.get("learning_rate"), "fl.local.learning_rate",
                                          low=0.0, low_open=True, default=5e-3),
        optimizer=check.expect_choice(local_raw.get("optimizer"), "fl.local.optimizer",
                                      ("sgd", "adam"), default="adam"),
    )
    fl = FLBlock(
        num_devices=check.expect_int(fl_raw.get("num_devices"), "fl.num_devices", 1, default=10),
        selection_fraction=check.expect_number(fl_raw.get("selection_fraction"),
                                               "fl.selection_fraction", low=0.0, high=1.0,
                                               low_open=True, default=1.0),
        rounds=check.expect_int(fl_raw.get("rounds"), "fl.rounds", 1, default=20),
        non_iid_degree=check.expect_number(fl_raw.get("non_iid_degree"), "fl.non_iid_degree",
                                           low=0.0, high=1.0, default=0.0),
        checkpoint_every=check.expect_int(fl_raw.get("checkpoint_every"), "fl.checkpoint_every",
                                          0, default=0),
        local=local,
    )

    attack = None
    if raw.get("attack") is not None:
        attack_raw = raw["attack"]
        num_classes = dataset.classes if isinstance(dataset, SyntheticDataset) else None
        gamma_mode = check.expect_choice(attack_raw.get("gamma_mode"), "attack.gamma_mode",
                                         GAMMA_MODES, default="n_over_nhat")
        gamma = check.expect_number(attack_raw.get("gamma"), "attack.gamma", low=1.0)
        if gamma_mode == "fixed" and gamma is None:
            check.fail("attack.gamma: required when gamma_mode is 'fixed'")
        if gamma_mode != "fixed" and gamma is not None:
            check.fail(f"attack.gamma: only valid with gamma_mode 'fixed', not {gamma_mode!r}")
        attack = AttackBlock(
            num_attackers=check.expect_int(attack_raw.get("num_attackers"),
                                           "attack.num_attackers", 1, default=1),
            target_label=check.expect_int(attack_raw.get("target_label"),
                                          "attack.target_label", 0, default=0),
            epsilon=check.expect_number(attack_raw.get("epsilon"), "attack.epsilon",
                                        low=0.0, high=1.0, low_open=True, default=0.1),
            gamma_mode=gamma_mode,
            gamma=gamma,
            trigger=_parse_trigger(attack_raw.get("trigger"), check),
        )
        if attack.num_attackers > fl.num_devices:
            check.fail(
                f"attack.num_attackers: {attack.num_attackers} exceeds fl.num_devices {fl.num_devices}"
            )
        if num_classes is not None and attack.target_label >= num_classes:
            check.fail(
                f"attack.target_label: {attack.target_label} outside {num_classes} classes"
            )
        if isinstance(dataset, SyntheticDataset) and attack.num_attackers > dataset.shape[0]:
            check.fail(
                f"attack.num_attackers: {attack.num_attackers} attackers cannot split "
                f"{dataset.shape[0]} frames"
            )

    strip = None
    if raw.get("strip") is not None:
        strip_raw = raw["strip"]
        ckpt = strip_raw.get("checkpoint")
        ckpt_path = None
        if ckpt is not None:
            if not isinstance(ckpt, str) or not ckpt:
                check.fail(f"strip.checkpoint: expected a path string, got {ckpt!r}")
            else:
                ckpt_path = Path(ckpt) if os.path.isabs(ckpt) else base_dir / ckpt
        strip = StripBlock(
            num_overlays=check.expect_int(strip_raw.get("num_overlays"), "strip.num_overlays",
                                          2, default=64),
            target_frr=check.expect_number(strip_raw.get("target_frr"), "strip.target_frr",
                                           low=0.0, high=0.5, low_open=True, high_open=True,
                                           default=0.01),
            checkpoint=ckpt_path,
            max_samples=check.expect_int(strip_raw.get("max_samples"), "strip.max_samples",
                                         2, default=200),
        )

    stealth = None
    if raw.get("stealth") is not None:
        stealth_raw = raw["stealth"]
        counts_raw = stealth_raw.get("attacker_counts", [1, 2, 4, 8])
        counts = (1, 2, 4, 8)
        if not (isinstance(counts_raw, list) and counts_raw
                and all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in counts_raw)):
            check.fail(f"stealth.attacker_counts: expected positive integers, got {counts_raw!r}")
        else:
            counts = tuple(counts_raw)
        stealth = StealthBlock(
            attacker_counts=counts,
            batch_size=check.expect_int(stealth_raw.get("batch_size"), "stealth.batch_size",
                                        1, default=16),
        )

    # Command-specific requirements.
    if command == "strip":
        if strip is None:
            check.fail("strip: block is required for the strip command")
        elif strip.checkpoint is None:
            check.fail("strip.checkpoint: a trained checkpoint is required for the strip command")
        elif not strip.checkpoint.is_file():
            check.fail(f"strip.checkpoint: file does not exist: {strip.checkpoint}")
        if attack is None:
            check.fail("attack: block is required for the strip command")
    if command == "stealth":
        if stealth is None:
            check.fail("stealth: block is required for the stealth command")
        if attack is None:
            check.fail("attack: block is required for the stealth command (defines the trigger)")

    if check.errors:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(check.errors))
    return ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        dataset=dataset,
        model=model,
        fl=fl,
        attack=attack,
        strip=strip,
        stealth=stealth,
    )
