"""Figure rendering for completed runs.

Reads whichever delimited outputs a run directory contains (rounds.csv,
entropy.csv, stealth.csv) and renders matplotlib figures next to them,
plus a compact report_summary.csv of headline numbers.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigurationError  # noqa: E402

_DPI = 130


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_rounds(run_dir: Path) -> Path:
    rows = _read_csv(run_dir / "rounds.csv")
    rounds = [int(r["round"]) for r in rows]
    acc = [float(r["clean_accuracy"]) for r in rows]
    asr = [float(r["asr"]) if r["asr"] else None for r in rows]
    attacker_rounds = [int(r["round"]) for r in rows if r["attacker_selected"] == "1"]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(rounds, acc, label="clean accuracy", color="tab:blue")
    if any(a is not None for a in asr):
        ax.plot(rounds, [a if a is not None else float("nan") for a in asr],
                label="attack success rate", color="tab:red")
    for i, r in enumerate(attacker_rounds):
        ax.axvline(r, color="tab:orange", alpha=0.15,
                   label="attacker selected" if i == 0 else None)
    ax.set_xlabel("round")
    ax.set_ylabel("rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right")
    ax.set_title("Federated training progress")
    fig.tight_layout()
    out = run_dir / "rounds.png"
    fig.savefig(out, dpi=_DPI)
    plt.close(fig)
    return out


def render_entropy(run_dir: Path) -> Path:
    rows = _read_csv(run_dir / "entropy.csv")
    clean = [float(r["entropy"]) for r in rows if r["set"] == "clean"]
    poisoned = [float(r["entropy"]) for r in rows if r["set"] == "poisoned"]
    boundary = None
    summary_path = run_dir / "strip_summary.json"
    if summary_path.is_file():
        boundary = json.loads(summary_path.read_text()).get("boundary")

    fig, ax = plt.subplots(figsize=(7, 4))
    bins = 30
    ax.hist(clean, bins=bins, alpha=0.55, label="clean", color="tab:blue", density=True)
    ax.hist(poisoned, bins=bins, alpha=0.55, label="poisoned", color="tab:red", density=True)
    if boundary is not None:
        ax.axvline(boundary, color="black", linestyle="--", label="decision boundary")
    ax.set_xlabel("overlay entropy (bits)")
    ax.set_ylabel("density")
    ax.legend()
    ax.set_title("Entropy of clean vs. poisoned inputs under overlays")
    fig.tight_layout()
    out = run_dir / "entropy_hist.png"
    fig.savefig(out, dpi=_DPI)
    plt.close(fig)
    return out


def render_stealth(run_dir: Path) -> Path:
    rows = _read_csv(run_dir / "stealth.csv")
    counts = [int(r["attacker_count"]) for r in rows]
    mse = [float(r["mse_x1000"]) for r in rows]
    ssim = [float(r["ssim_x100"]) for r in rows]

    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(counts, mse, "o-", color="tab:red", label="MSE x1000")
    ax1.set_xlabel("attackers splitting the trigger")
    ax1.set_ylabel("MSE x1000", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(counts, ssim, "s-", color="tab:blue", label="SSIM x100")
    ax2.set_ylabel("SSIM x100", color="tab:blue")
    ax1.set_title("Trigger stealthiness vs. attacker count")
    fig.tight_layout()
    out = run_dir / "stealth.png"
    fig.savefig(out, dpi=_DPI)
    plt.close(fig)
    return out


def generate_report(run_dir) -> list[Path]:
    """Render every figure the directory's outputs support and write
    report_summary.csv; returns the written paths."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigurationError(f"run directory does not exist: {run_dir}")
    written: list[Path] = []
    summary: list[tuple[str, str]] = []

    if (run_dir / "rounds.csv").is_file():
        written.append(render_rounds(run_dir))
        rows = _read_csv(run_dir / "rounds.csv")
        if rows:
            last = rows[-1]
            summary.append(("final_clean_accuracy", last["clean_accuracy"]))
            if last["asr"]:
                summary.append(("final_asr", last["asr"]))
    if (run_dir / "entropy.csv").is_file():
        written.append(render_entropy(run_dir))
        summary_path = run_dir / "strip_summary.json"
        if summary_path.is_file():
            strip_summary = json.loads(summary_path.read_text())
            for key in ("boundary", "far", "frr"):
                if key in strip_summary:
                    summary.append((f"strip_{key}", repr(strip_summary[key])))
    if (run_dir / "stealth.csv").is_file():
        written.append(render_stealth(run_dir))
        for row in _read_csv(run_dir / "stealth.csv"):
            summary.append(
                (f"stealth_mse_x1000_k{row['attacker_count']}", row["mse_x1000"])
            )
            summary.append(
                (f"stealth_ssim_x100_k{row['attacker_count']}", row["ssim_x100"])
            )

    if not written:
        raise ConfigurationError(
            f"nothing to report: {run_dir} has none of rounds.csv, entropy.csv, stealth.csv"
        )
    summary_file = run_dir / "report_summary.csv"
    with open(summary_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(summary)
    written.append(summary_file)
    return written
