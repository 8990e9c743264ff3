"""Event-frame data model: synthetic dataset generation, the EVTF file
format, and IID / Dirichlet non-IID partitioning across devices.

A sample is a real-valued array of shape (T, P, H, W) with values in
[0, 1]: T time-step frames, P polarity channels, height H, width W.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError

# Fraction of cells pushed to the opposite extreme when sampling noise.
NOISE_FLIP_PROB = 0.05

_EVTF_MAGIC = b"EVTF"
_EVTF_VERSION = 1
_EVTF_DTYPE_F32 = 0
_EVTF_HEADER = struct.Struct("<4sHBBIIIIQ")  # magic, version, dtype, reserved, T,P,H,W, count
_U16_MAX = 0xFFFF
_U32_MAX = 0xFFFFFFFF


def validate_event_tensor(frames: np.ndarray) -> None:
    """Raise ConfigurationError unless ``frames`` is a valid event tensor."""
    if frames.ndim != 4:
        raise ConfigurationError(f"event tensor must be 4-D (T,P,H,W), got ndim={frames.ndim}")
    t, p, h, w = frames.shape
    if t < 1 or p not in (1, 2) or h < 4 or w < 4:
        raise ConfigurationError(f"invalid event tensor shape {frames.shape}")
    if not np.isfinite(frames).all():
        raise ConfigurationError("event tensor contains non-finite values")
    if frames.min() < 0.0 or frames.max() > 1.0:
        raise ConfigurationError("event tensor values must lie in [0, 1]")


def validate_shape(shape: tuple[int, int, int, int]) -> None:
    if len(shape) != 4:
        raise ConfigurationError(f"shape must be (T,P,H,W), got {shape}")
    t, p, h, w = shape
    if t < 1 or p not in (1, 2) or h < 4 or w < 4:
        raise ConfigurationError(f"invalid sample shape {shape}")


@dataclass(frozen=True)
class LabeledSample:
    """One event tensor with its class index."""

    frames: np.ndarray
    label: int


@dataclass(frozen=True)
class PartitionConfig:
    """How to split sample indices across devices.

    ``non_iid_degree`` d in [0, 1]: d=0 is an exact round-robin class-balanced
    split; d>0 draws per-class device shares from Dirichlet(alpha) with
    alpha = (1-d)/d, so d=0.5 is the uniform Dirichlet and d->1 is fully skewed.
    """

    num_devices: int
    non_iid_degree: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_devices < 1:
            raise ConfigurationError(f"num_devices must be >= 1, got {self.num_devices}")
        if not 0.0 <= self.non_iid_degree <= 1.0:
            raise ConfigurationError(f"non_iid_degree must be in [0,1], got {self.non_iid_degree}")


def _blob(h: int, w: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    """Gaussian bump centered at (cy, cx), wrapped toroidally so the moving
    pattern never leaves the frame."""
    dy = np.abs(np.arange(h)[:, None] - cy)
    dy = np.minimum(dy, h - dy)
    dx = np.abs(np.arange(w)[None, :] - cx)
    dx = np.minimum(dx, w - dx)
    return np.exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma))


def generate_synthetic_dataset(
    num_classes: int,
    samples_per_class: int,
    shape: tuple[int, int, int, int],
    seed: int,
) -> list[LabeledSample]:
    """Deterministic stand-in for frame-binned event datasets.

    Each class is a bright blob drifting along a class-keyed trajectory:
    channel 0 holds the blob at its current position, channel 1 (when P=2)
    trails one step behind, loosely mimicking on/off event polarity of a
    moving object. Samples of one class jitter around the class trajectory
    (start position and speed), and each cell is independently flipped
    toward 0 or 1 with probability ``NOISE_FLIP_PROB``.
    """
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    if samples_per_class < 1:
        raise ConfigurationError(f"samples_per_class must be >= 1, got {samples_per_class}")
    validate_shape(tuple(shape))
    t, p, h, w = shape

    rng = np.random.default_rng(seed)
    sigma = max(h, w) / 8.0
    jitter = h / 8.0
    samples: list[LabeledSample] = []
    for c in range(num_classes):
        # Trajectory geometry is keyed to the class only, so independently
        # seeded datasets (e.g. train/test splits) share class patterns.
        phi = 2.0 * np.pi * c / num_classes
        start_y = h / 2.0 + 0.3 * h * np.sin(phi)
        start_x = w / 2.0 + 0.3 * w * np.cos(phi)
        vel_y = 0.8 * np.sin(phi + np.pi / 2.0) + 0.15 * c
        vel_x = 0.8 * np.cos(phi + np.pi / 2.0)

        for _ in range(samples_per_class):
            oy, ox = rng.uniform(-jitter, jitter, size=2)
            speed = rng.uniform(0.8, 1.2)
            frames = np.zeros((t, p, h, w), dtype=np.float32)
            for step in range(t):
                cy = (start_y + oy + speed * vel_y * step) % h
                cx = (start_x + ox + speed * vel_x * step) % w
                frames[step, 0] = _blob(h, w, cy, cx, sigma)
                if p == 2:
                    cy_prev = (start_y + oy + speed * vel_y * (step - 1)) % h
                    cx_prev = (start_x + ox + speed * vel_x * (step - 1)) % w
                    frames[step, 1] = _blob(h, w, cy_prev, cx_prev, sigma)
            flip = rng.random(frames.shape) < NOISE_FLIP_PROB
            frames[flip] = np.where(frames[flip] < 0.5, 1.0, 0.0).astype(np.float32)
            frames.setflags(write=False)
            samples.append(LabeledSample(frames=frames, label=c))
    return samples


def write_dataset(samples: list[LabeledSample], path) -> None:
    """Write samples to an EVTF file (see the module format notes below).

    All samples must share one shape. The format is bit-exact: reading the
    file back yields element-wise identical float32 values.
    """
    if samples:
        shape = samples[0].frames.shape
        for s in samples:
            if s.frames.shape != shape:
                raise ConfigurationError(
                    f"all samples must share one shape; got {shape} and {s.frames.shape}"
                )
        t, p, h, w = shape
    else:
        t, p, h, w = 1, 1, 4, 4  # placeholder dims for an empty file
    for dim in (t, p, h, w):
        if dim > _U32_MAX:
            raise FormatError(f"dimension {dim} exceeds the u32 format limit")

    with open(path, "wb") as fh:
        fh.write(_EVTF_HEADER.pack(_EVTF_MAGIC, _EVTF_VERSION, _EVTF_DTYPE_F32, 0,
                                   t, p, h, w, len(samples)))
        for s in samples:
            if not 0 <= s.label <= _U16_MAX:
                raise FormatError(f"label {s.label} does not fit in u16")
            fh.write(struct.pack("<H", s.label))
            fh.write(np.ascontiguousarray(s.frames, dtype="<f4").tobytes())


def read_dataset(path) -> list[LabeledSample]:
    """Read an EVTF file written by :func:`write_dataset`."""
    with open(path, "rb") as fh:
        raw = fh.read()

    if len(raw) < _EVTF_HEADER.size:
        raise FormatError("file too short for an EVTF header")
    magic, version, dtype, _reserved, t, p, h, w, count = _EVTF_HEADER.unpack_from(raw, 0)
    if magic != _EVTF_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_EVTF_MAGIC!r}")
    if version != _EVTF_VERSION:
        raise FormatError(f"unsupported EVTF version {version}")
    if dtype != _EVTF_DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}")

    values_per_sample = t * p * h * w
    record = 2 + 4 * values_per_sample
    expected = _EVTF_HEADER.size + count * record
    if len(raw) != expected:
        raise FormatError(f"file length {len(raw)} does not match header (expected {expected})")

    samples: list[LabeledSample] = []
    offset = _EVTF_HEADER.size
    for _ in range(count):
        (label,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        frames = np.frombuffer(raw, dtype="<f4", count=values_per_sample, offset=offset)
        offset += 4 * values_per_sample
        frames = frames.reshape(t, p, h, w).copy()
        try:
            validate_event_tensor(frames)
        except ConfigurationError as exc:
            raise FormatError(f"file contains invalid sample data: {exc}") from exc
        frames.setflags(write=False)
        samples.append(LabeledSample(frames=frames, label=int(label)))
    return samples


def _round_robin_partition(labels: np.ndarray, n: int, rng: np.random.Generator) -> list[list[int]]:
    device_indices: list[list[int]] = [[] for _ in range(n)]
    for c in np.unique(labels):
        class_idx = np.flatnonzero(labels == c)
        class_idx = class_idx[rng.permutation(len(class_idx))]
        # Rotate the dealing start per class so remainders spread evenly.
        start = int(c) % n
        for j, idx in enumerate(class_idx):
            device_indices[(start + j) % n].append(int(idx))
    return device_indices


def _dirichlet_partition(
    labels: np.ndarray, n: int, alpha: float, rng: np.random.Generator
) -> list[list[int]]:
    device_indices: list[list[int]] = [[] for _ in range(n)]
    for c in np.unique(labels):
        class_idx = np.flatnonzero(labels == c)
        class_idx = class_idx[rng.permutation(len(class_idx))]
        shares = rng.dirichlet(np.full(n, alpha))
        cut = (np.cumsum(shares) * len(class_idx)).astype(int)[:-1]
        for dev, part in enumerate(np.split(class_idx, cut)):
            device_indices[dev].extend(int(i) for i in part)
    return device_indices


def partition(samples: list[LabeledSample], cfg: PartitionConfig) -> list[np.ndarray]:
    """Split sample indices into one disjoint index array per device.

    Guarantees a disjoint cover of all indices and at least one sample per
    device: skewed draws are retried up to 100 times, after which single
    samples are moved from the largest device.
    """
    n = cfg.num_devices
    if len(samples) < n:
        raise ConfigurationError(f"{n} devices but only {len(samples)} samples")
    labels = np.array([s.label for s in samples], dtype=np.int64)

    rng = np.random.default_rng(cfg.seed)
    if cfg.non_iid_degree == 0.0:
        device_indices = _round_robin_partition(labels, n, rng)
    else:
        alpha = (1.0 - cfg.non_iid_degree) / cfg.non_iid_degree
        device_indices = _dirichlet_partition(labels, n, alpha, rng)
        for _ in range(100):
            if all(device_indices):
                break
            device_indices = _dirichlet_partition(labels, n, alpha, rng)
        while not all(device_indices):
            largest = max(range(n), key=lambda d: len(device_indices[d]))
            empty = next(d for d in range(n) if not device_indices[d])
            device_indices[empty].append(device_indices[largest].pop())

    return [np.array(sorted(idx), dtype=np.int64) for idx in device_indices]
