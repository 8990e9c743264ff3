"""Trigger stealthiness: per-frame MSE and windowed structural similarity
between clean and poisoned samples, averaged over frames and batches, with a
breakdown by attacker count (more attackers touch fewer frames per sample)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .attack import TriggerSpec, apply_trigger, frame_mask_for_bandit
from .data import LabeledSample
from .errors import ConfigurationError

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
_SSIM_C1 = (0.01) ** 2  # dynamic range is 1
_SSIM_C2 = (0.03) ** 2


def mse_frames(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over frames of the mean squared element difference per frame."""
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    per_frame = (diff * diff).mean(axis=(1, 2, 3))
    return float(per_frame.mean())


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


_KERNEL = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)


def _windowed_mean(img: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
    return np.tensordot(win, _KERNEL, axes=([2, 3], [0, 1]))


def _ssim_plane(a: np.ndarray, b: np.ndarray) -> float:
    mu_a = _windowed_mean(a)
    mu_b = _windowed_mean(b)
    var_a = _windowed_mean(a * a) - mu_a * mu_a
    var_b = _windowed_mean(b * b) - mu_b * mu_b
    cov = _windowed_mean(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return float((num / den).mean())


def ssim_frames(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with a 7x7 Gaussian window (sigma 1.5) over all
    fully contained window positions, averaged over channels and frames."""
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    t, p, h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ConfigurationError(f"frame {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    scores = [
        _ssim_plane(a64[frame, chan], b64[frame, chan])
        for frame in range(t)
        for chan in range(p)
    ]
    return float(np.mean(scores))


@dataclass(frozen=True)
class StealthRow:
    attacker_count: int
    mse_raw: float
    mse_x1000: float
    ssim: float
    ssim_x100: float


@dataclass(frozen=True)
class StealthReport:
    """One row per attacker count. MSE is computed on [0,1] values and also
    reported x1000; SSIM also x100."""

    rows: tuple[StealthRow, ...]
    trigger: TriggerSpec

    def csv_rows(self):
        for r in self.rows:
            yield r.attacker_count, r.mse_raw, r.mse_x1000, r.ssim, r.ssim_x100


def build_poisoned_batch(
    clean_batch: list[LabeledSample], attacker_count: int, trig: TriggerSpec
) -> list[LabeledSample]:
    """Poisoned twin of the batch as the first of ``attacker_count`` attackers
    would see it: trigger stamped on that attacker's frame block."""
    if not clean_batch:
        raise ConfigurationError("empty clean batch")
    num_frames = clean_batch[0].frames.shape[0]
    mask = frame_mask_for_bandit(1, attacker_count, num_frames)
    return [
        LabeledSample(frames=apply_trigger(s.frames, trig, mask), label=s.label)
        for s in clean_batch
    ]


def stealth_report(
    clean_batch: list[LabeledSample],
    poisoned_batches: dict[int, list[LabeledSample]],
    trig: TriggerSpec,
) -> StealthReport:
    """Average pairwise metrics per attacker count.

    ``poisoned_batches[k][i]`` must be derived from ``clean_batch[i]``.
    """
    if not clean_batch:
        raise ConfigurationError("empty clean batch")
    rows = []
    for count in sorted(poisoned_batches):
        poisoned = poisoned_batches[count]
        if len(poisoned) != len(clean_batch):
            raise ConfigurationError(
                f"attacker count {count}: {len(poisoned)} poisoned vs "
                f"{len(clean_batch)} clean samples"
            )
        mses, ssims = [], []
        for clean, bad in zip(clean_batch, poisoned):
            if clean.frames.shape != bad.frames.shape:
                raise ConfigurationError(f"attacker count {count}: misaligned sample shapes")
            mses.append(mse_frames(clean.frames, bad.frames))
            ssims.append(ssim_frames(clean.frames, bad.frames))
        mse = float(np.mean(mses))
        ssim = float(np.mean(ssims))
        rows.append(StealthRow(count, mse, mse * 1000.0, ssim, ssim * 100.0))
    return StealthReport(rows=tuple(rows), trigger=trig)
