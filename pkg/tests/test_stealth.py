"""Frame-averaged MSE and windowed structural similarity, with a naive
sliding-window oracle for the SSIM implementation."""

import numpy as np
import pytest

from spikefed import (
    ConfigurationError,
    LabeledSample,
    TriggerSpec,
    mse_frames,
    ssim_frames,
    stealth_report,
)
from spikefed.stealth import SSIM_SIGMA, SSIM_WINDOW, build_poisoned_batch


def naive_ssim_plane(a, b):
    """Window-by-window reference: explicit loops, explicit kernel."""
    half = (SSIM_WINDOW - 1) / 2.0
    coords = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(coords**2) / (2.0 * SSIM_SIGMA**2))
    kernel = np.outer(g, g)
    kernel /= kernel.sum()
    c1, c2 = 0.01**2, 0.03**2
    h, w = a.shape
    scores = []
    for top in range(h - SSIM_WINDOW + 1):
        for left in range(w - SSIM_WINDOW + 1):
            wa = a[top : top + SSIM_WINDOW, left : left + SSIM_WINDOW]
            wb = b[top : top + SSIM_WINDOW, left : left + SSIM_WINDOW]
            mu_a = (kernel * wa).sum()
            mu_b = (kernel * wb).sum()
            var_a = (kernel * wa * wa).sum() - mu_a**2
            var_b = (kernel * wb * wb).sum() - mu_b**2
            cov = (kernel * wa * wb).sum() - mu_a * mu_b
            scores.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(scores))


class TestMse:
    def test_identical_tensors(self):
        x = np.random.default_rng(0).random((4, 2, 8, 8))
        assert mse_frames(x, x) == 0.0

    def test_unit_difference(self):
        a = np.ones((4, 2, 8, 8))
        b = np.zeros((4, 2, 8, 8))
        assert mse_frames(a, b) == 1.0

    def test_half_frame_trigger_halves_mse(self):
        # Identical content in every frame: trigger on half the frames gives
        # exactly half the full-trigger MSE.
        frame = np.random.default_rng(1).random((2, 16, 16)).astype(np.float32)
        x = np.broadcast_to(frame, (8, 2, 16, 16)).copy()
        from spikefed import apply_trigger, full_frame_mask
        from spikefed.attack import frame_mask_for_bandit

        trig = TriggerSpec()
        full = apply_trigger(x, trig, full_frame_mask(8))
        half = apply_trigger(x, trig, frame_mask_for_bandit(1, 2, 8))
        assert mse_frames(x, half) == pytest.approx(0.5 * mse_frames(x, full), rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            mse_frames(np.zeros((2, 1, 8, 8)), np.zeros((2, 1, 8, 9)))


class TestSsim:
    def test_identical_tensors(self):
        x = np.random.default_rng(0).random((3, 2, 12, 12))
        assert ssim_frames(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((2, 1, 10, 10)), rng.random((2, 1, 10, 10))
        assert ssim_frames(a, b) == pytest.approx(ssim_frames(b, a), abs=1e-12)

    def test_constant_frames_closed_form(self):
        # mu_a=1, mu_b=0.5, zero variance: luminance term only, about 0.8001
        a = np.ones((1, 1, 8, 8))
        b = np.full((1, 1, 8, 8), 0.5)
        expected = (2 * 1.0 * 0.5 + 0.01**2) / (1.0**2 + 0.5**2 + 0.01**2)
        assert ssim_frames(a, b) == pytest.approx(expected, abs=1e-9)
        assert ssim_frames(a, b) == pytest.approx(0.8001, abs=1e-3)

    def test_matches_naive_window_oracle(self):
        rng = np.random.default_rng(4)
        a = rng.random((2, 2, 11, 13))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        expected = np.mean(
            [naive_ssim_plane(a[t, c], b[t, c]) for t in range(2) for c in range(2)]
        )
        assert ssim_frames(a, b) == pytest.approx(expected, abs=1e-10)

    def test_bounded(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a, b = rng.random((1, 1, 9, 9)), rng.random((1, 1, 9, 9))
            assert -1.0 <= ssim_frames(a, b) <= 1.0

    def test_small_frame_rejected(self):
        with pytest.raises(ConfigurationError):
            ssim_frames(np.zeros((1, 1, 6, 6)), np.zeros((1, 1, 6, 6)))


def clean_batch(n=6, shape=(16, 2, 16, 16), seed=3):
    rng = np.random.default_rng(seed)
    return [
        LabeledSample(frames=rng.random(shape).astype(np.float32), label=int(rng.integers(4)))
        for _ in range(n)
    ]


class TestStealthReport:
    def test_identical_batches_give_zero_mse(self):
        batch = clean_batch()
        report = stealth_report(batch, {1: batch}, TriggerSpec())
        row = report.rows[0]
        assert row.mse_raw == 0.0
        assert row.ssim == pytest.approx(1.0, abs=1e-12)

    def test_monotone_in_attacker_count(self):
        batch = clean_batch()
        trig = TriggerSpec()
        poisoned = {k: build_poisoned_batch(batch, k, trig) for k in (1, 2, 4, 8)}
        report = stealth_report(batch, poisoned, trig)
        mses = [r.mse_raw for r in report.rows]
        ssims = [r.ssim for r in report.rows]
        assert all(a > b for a, b in zip(mses, mses[1:]))
        assert all(a <= b for a, b in zip(ssims, ssims[1:]))

    def test_nested_masks_strictly_reduce_mse(self):
        batch = clean_batch(n=3)
        trig = TriggerSpec()
        a = build_poisoned_batch(batch, 2, trig)  # frames 0..7
        b = build_poisoned_batch(batch, 4, trig)  # frames 0..3
        for clean, wide, narrow in zip(batch, a, b):
            assert mse_frames(clean.frames, narrow.frames) < mse_frames(clean.frames, wide.frames)

    def test_scaled_columns(self):
        batch = clean_batch(n=2)
        trig = TriggerSpec()
        report = stealth_report(batch, {2: build_poisoned_batch(batch, 2, trig)}, trig)
        row = report.rows[0]
        assert row.mse_x1000 == pytest.approx(1000 * row.mse_raw)
        assert row.ssim_x100 == pytest.approx(100 * row.ssim)

    def test_misaligned_batches_rejected(self):
        batch = clean_batch(n=4)
        with pytest.raises(ConfigurationError):
            stealth_report(batch, {1: batch[:2]}, TriggerSpec())
