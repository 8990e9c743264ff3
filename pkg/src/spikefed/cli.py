"""Command-line front end.

Subcommands: gen-data, run, strip, stealth, report. Exit codes: 0 success,
2 configuration error, 3 runtime error. SPIKEFED_SEED overrides the config
seed for config-driven commands.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .data import generate_synthetic_dataset, write_dataset
from .errors import ConfigurationError, FormatError, SpikeFedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _parse_shape(raw: str) -> tuple[int, int, int, int]:
    parts = raw.split(",")
    if len(parts) != 4:
        raise ConfigurationError(f"--shape: expected T,P,H,W, got {raw!r}")
    try:
        shape = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigurationError(f"--shape: not integers: {raw!r}") from exc
    t, p, h, w = shape
    if t < 1 or p not in (1, 2) or h < 4 or w < 4:
        raise ConfigurationError(
            f"--shape: invalid {raw!r} (need T>=1, P in 1..2, H,W>=4)"
        )
    return shape


def cmd_gen_data(args) -> int:
    shape = _parse_shape(args.shape)
    samples = generate_synthetic_dataset(args.classes, args.per_class, shape, args.seed)
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples of shape {shape} to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiment import run_experiment

    cfg = load_config(args.config, command="run")
    out_dir = Path(args.out) if args.out else cfg.output_dir
    if out_dir is None:
        raise ConfigurationError("no output directory: set output_dir in the config or pass --out")
    result = run_experiment(cfg, out_dir, threads=args.threads)
    line = f"done: {len(result.logs)} rounds, clean accuracy {result.clean_accuracy:.4f}"
    if result.asr is not None:
        line += f", ASR {result.asr:.4f}"
    print(line)
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_strip(args) -> int:
    from .experiment import run_strip

    cfg = load_config(args.config, command="strip")
    out_dir = Path(args.out) if args.out else cfg.output_dir
    if out_dir is None:
        raise ConfigurationError("no output directory: set output_dir in the config or pass --out")
    summary = run_strip(cfg, out_dir)
    print(
        "strip: boundary {boundary:.4f} (mu {mu:.4f}, sigma {sigma:.4f}), "
        "FAR {far:.4f}, FRR {frr:.4f}".format(**summary)
    )
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_stealth(args) -> int:
    from .experiment import run_stealth

    cfg = load_config(args.config, command="stealth")
    out_dir = Path(args.out) if args.out else cfg.output_dir
    if out_dir is None:
        raise ConfigurationError("no output directory: set output_dir in the config or pass --out")
    report = run_stealth(cfg, out_dir)
    for row in report.rows:
        print(
            f"attackers={row.attacker_count}: mse_x1000={row.mse_x1000:.4f} "
            f"ssim_x100={row.ssim_x100:.4f}"
        )
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import generate_report

    written = generate_report(args.run_dir)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikefed",
        description="Federated spiking-network simulation: baselines, backdoor "
        "attacks, defense evaluation, and stealth metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic event dataset file")
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--per-class", type=int, required=True)
    gen.add_argument("--shape", type=str, required=True, help="T,P,H,W")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=str, required=True)
    gen.set_defaults(func=cmd_gen_data)

    run = sub.add_parser("run", help="run a federated scenario from a JSON config")
    run.add_argument("config", type=str)
    run.add_argument("--out", type=str, default=None, help="output directory")
    run.add_argument("--threads", type=int, default=1,
                     help="worker threads for local updates (1 = serial)")
    run.set_defaults(func=cmd_run)

    strip = sub.add_parser("strip", help="evaluate the entropy defense on a checkpoint")
    strip.add_argument("config", type=str)
    strip.add_argument("--out", type=str, default=None)
    strip.set_defaults(func=cmd_strip)

    stealth = sub.add_parser("stealth", help="compute trigger stealth metrics")
    stealth.add_argument("config", type=str)
    stealth.add_argument("--out", type=str, default=None)
    stealth.set_defaults(func=cmd_stealth)

    report = sub.add_parser("report", help="render figures for a completed run directory")
    report.add_argument("run_dir", type=str)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpikeFedError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
