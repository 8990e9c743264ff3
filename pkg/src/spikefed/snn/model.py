"""Model specification, parameter layout, and initialization.

A model is an ordered list of layer specs processed once per time step with
persistent membrane state in the spiking layers. All trainable parameters
(plus batch-norm running statistics, which receive zero gradient) live in
one flat vector with a deterministic layout, so two models built from the
same spec always share byte-compatible layouts.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError


@dataclass(frozen=True)
class LIFConfig:
    """Leaky integrate-and-fire dynamics: V <- V + (I - V)/tau, spike when
    V >= threshold, hard reset to zero."""

    threshold: float = 1.0
    tau: float = 2.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ConfigurationError(f"threshold must be > 0, got {self.threshold}")
        if self.tau <= 1:
            raise ConfigurationError(f"tau must be > 1, got {self.tau}")


@dataclass(frozen=True)
class SurrogateConfig:
    """Arctan surrogate used in place of the spike step during backprop."""

    width: float = 2.0

    def __post_init__(self):
        if self.width <= 0:
            raise ConfigurationError(f"surrogate width must be > 0, got {self.width}")


@dataclass(frozen=True)
class Conv2d:
    kernel: int
    in_channels: int
    out_channels: int


@dataclass(frozen=True)
class BatchNorm:
    pass


@dataclass(frozen=True)
class MaxPool2d:
    size: int = 2


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Dropout:
    p: float


@dataclass(frozen=True)
class LIF:
    cfg: LIFConfig = field(default_factory=LIFConfig)


@dataclass(frozen=True)
class Voting:
    """Final layer: averages disjoint groups of ``group_size`` units into
    one logit per class."""

    group_size: int = 1


LayerSpec = Conv2d | BatchNorm | MaxPool2d | Linear | Dropout | LIF | Voting


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    num_classes: int
    input_shape: tuple[int, int, int]  # (P, H, W) of a single frame
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    def __post_init__(self):
        _compile(self)  # validate eagerly


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    offset: int
    length: int
    shape: tuple[int, ...]
    trainable: bool = True


@dataclass(frozen=True)
class CompiledModel:
    """Shape-checked plan: per-layer input shapes plus the flat layout."""

    steps: tuple[tuple[LayerSpec, tuple[int, ...]], ...]  # (layer, input feature shape)
    entries: tuple[LayoutEntry, ...]
    total_params: int
    pre_voting_width: int
    voting_group: int  # 0 when the model has no voting layer


@functools.lru_cache(maxsize=None)
def _compile(model: ModelSpec) -> CompiledModel:
    if not model.layers:
        raise ConfigurationError("model has no layers")
    if model.num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {model.num_classes}")

    shape: tuple[int, ...] = tuple(model.input_shape)
    if len(shape) != 3:
        raise ConfigurationError(f"input_shape must be (P,H,W), got {shape}")

    steps: list[tuple[LayerSpec, tuple[int, ...]]] = []
    entries: list[LayoutEntry] = []
    offset = 0
    voting_group = 0

    def add(name: str, arr_shape: tuple[int, ...], trainable: bool = True):
        nonlocal offset
        length = int(np.prod(arr_shape))
        entries.append(LayoutEntry(name, offset, length, arr_shape, trainable))
        offset += length

    for i, layer in enumerate(model.layers):
        if voting_group:
            raise ConfigurationError("voting must be the final layer")
        steps.append((layer, shape))
        tag = f"{i:02d}"
        if isinstance(layer, Conv2d):
            if len(shape) != 3:
                raise ConfigurationError(f"layer {i}: conv2d needs (C,H,W) input, got {shape}")
            c, h, w = shape
            if c != layer.in_channels:
                raise ConfigurationError(
                    f"layer {i}: conv2d expects {layer.in_channels} channels, got {c}"
                )
            if layer.kernel % 2 != 1 or layer.kernel < 1:
                raise ConfigurationError(f"layer {i}: conv kernel must be odd, got {layer.kernel}")
            add(f"{tag}.conv2d.weight", (layer.out_channels, c, layer.kernel, layer.kernel))
            add(f"{tag}.conv2d.bias", (layer.out_channels,))
            shape = (layer.out_channels, h, w)
        elif isinstance(layer, BatchNorm):
            if len(shape) != 3:
                raise ConfigurationError(f"layer {i}: batchnorm needs (C,H,W) input, got {shape}")
            c = shape[0]
            add(f"{tag}.batchnorm.gamma", (c,))
            add(f"{tag}.batchnorm.beta", (c,))
            add(f"{tag}.batchnorm.running_mean", (c,), trainable=False)
            add(f"{tag}.batchnorm.running_var", (c,), trainable=False)
        elif isinstance(layer, MaxPool2d):
            if len(shape) != 3:
                raise ConfigurationError(f"layer {i}: maxpool needs (C,H,W) input, got {shape}")
            c, h, w = shape
            if h % layer.size or w % layer.size:
                raise ConfigurationError(
                    f"layer {i}: maxpool size {layer.size} does not divide {h}x{w}"
                )
            shape = (c, h // layer.size, w // layer.size)
        elif isinstance(layer, Linear):
            width = int(np.prod(shape))
            if width != layer.in_features:
                raise ConfigurationError(
                    f"layer {i}: linear expects {layer.in_features} inputs, preceding "
                    f"shape {shape} has {width}"
                )
            add(f"{tag}.linear.weight", (layer.out_features, layer.in_features))
            add(f"{tag}.linear.bias", (layer.out_features,))
            shape = (layer.out_features,)
        elif isinstance(layer, Dropout):
            if not 0.0 <= layer.p < 1.0:
                raise ConfigurationError(f"layer {i}: dropout p must be in [0,1), got {layer.p}")
        elif isinstance(layer, LIF):
            pass  # any shape, no parameters
        elif isinstance(layer, Voting):
            if layer.group_size < 1:
                raise ConfigurationError(f"layer {i}: voting group size must be >= 1")
            width = int(np.prod(shape))
            if width != model.num_classes * layer.group_size:
                raise ConfigurationError(
                    f"layer {i}: voting over groups of {layer.group_size} needs "
                    f"{model.num_classes * layer.group_size} units, got {width}"
                )
            voting_group = layer.group_size
        else:
            raise ConfigurationError(f"layer {i}: unknown layer spec {layer!r}")

    pre_voting_width = int(np.prod(shape))
    if not voting_group and pre_voting_width != model.num_classes:
        raise ConfigurationError(
            f"final width {pre_voting_width} does not match num_classes {model.num_classes}"
        )
    return CompiledModel(tuple(steps), tuple(entries), offset, pre_voting_width, voting_group)


def compiled(model: ModelSpec) -> CompiledModel:
    return _compile(model)


class ParamVector:
    """Flat parameter vector plus its layout manifest.

    Shared vectors are treated as immutable by convention: every consumer
    that mutates (training, optimizers) works on its own ``copy()``.
    """

    __slots__ = ("values", "layout")

    def __init__(self, values: np.ndarray, layout: tuple[LayoutEntry, ...]):
        values = np.asarray(values)
        if values.ndim != 1:
            raise ConfigurationError("parameter vector must be 1-D")
        total = sum(e.length for e in layout)
        if total != values.shape[0]:
            raise ConfigurationError(
                f"layout covers {total} values but vector has {values.shape[0]}"
            )
        self.values = values
        self.layout = tuple(layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def astype(self, dtype) -> "ParamVector":
        return ParamVector(self.values.astype(dtype), self.layout)

    def view(self, name: str) -> np.ndarray:
        for e in self.layout:
            if e.name == name:
                return self.values[e.offset : e.offset + e.length].reshape(e.shape)
        raise KeyError(name)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def __len__(self) -> int:
        return int(self.values.shape[0])


def zeros_like(params: ParamVector) -> ParamVector:
    return ParamVector(np.zeros_like(params.values), params.layout)


def init_params(model: ModelSpec, seed: int, dtype=np.float32) -> ParamVector:
    """Seeded init: weights uniform in +-sqrt(6/fan_in), biases zero,
    batch-norm gamma=1 / beta=0, running stats (0, 1)."""
    plan = _compile(model)
    values = np.zeros(plan.total_params, dtype=dtype)
    params = ParamVector(values, plan.entries)
    rng = np.random.default_rng(seed)
    for e in plan.entries:
        v = params.view(e.name)
        if e.name.endswith(".conv2d.weight"):
            fan_in = int(np.prod(e.shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            v[...] = rng.uniform(-bound, bound, size=e.shape).astype(dtype)
        elif e.name.endswith(".linear.weight"):
            bound = math.sqrt(6.0 / e.shape[1])
            v[...] = rng.uniform(-bound, bound, size=e.shape).astype(dtype)
        elif e.name.endswith((".batchnorm.gamma", ".batchnorm.running_var")):
            v[...] = 1.0
        # biases, beta, running_mean stay zero
    return params


def reference_model(
    input_shape: tuple[int, int, int],
    num_classes: int,
    channels: int = 8,
    voting_group: int = 1,
    lif: LIFConfig | None = None,
    surrogate: SurrogateConfig | None = None,
) -> ModelSpec:
    """Desk-scale architecture: conv3x3 -> batchnorm -> lif -> maxpool2 ->
    linear -> lif -> voting."""
    p, h, w = input_shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"reference model needs even H and W, got {h}x{w}")
    lif = lif or LIFConfig()
    flat = channels * (h // 2) * (w // 2)
    return ModelSpec(
        layers=(
            Conv2d(3, p, channels),
            BatchNorm(),
            LIF(lif),
            MaxPool2d(2),
            Linear(flat, num_classes * voting_group),
            LIF(lif),
            Voting(voting_group),
        ),
        num_classes=num_classes,
        input_shape=input_shape,
        surrogate=surrogate or SurrogateConfig(),
    )


MODEL_BUILDERS = {
    "reference": reference_model,
}
