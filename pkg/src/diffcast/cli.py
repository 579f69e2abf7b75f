"""Command-line front end.

Subcommands: gen-data, train, forecast, eval, ablate, sweep,
inspect-diffusion.  Every ExperimentConfig field is exposed as a flag on
the commands that train or load data, so runs are scriptable without a
config file; --config loads a JSON file first and explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, preset
from .data import generate_d1, generate_d2, generate_toy, save_csv
from .disentangle import discretize_equal_frequency, mig, tc_loss, train_discriminator
from .evaluate import (
    climatology_metrics,
    diffusion_inspect,
    evaluate_split,
    forecast,
    sweep_schedule,
)
from .pipeline import load_dataset, prepare_windows, raw_window, run_experiment
from .schedule import build_schedule
from .train import Checkpoint, ablation_suite

_TUPLE_FIELDS = {"split_ratios", "target_dims"}


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p != "")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file to start from")
    parser.add_argument("--preset", help="named preset (d1, d2, toy, ett, weather, etth1, wind)")
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in _TUPLE_FIELDS:
            group.add_argument(flag, dest=f.name, type=_parse_int_tuple, default=argparse.SUPPRESS)
        elif isinstance(f.default, bool):
            group.add_argument(
                flag, dest=f.name, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS
            )
        elif isinstance(f.default, int):
            group.add_argument(flag, dest=f.name, type=int, default=argparse.SUPPRESS)
        elif isinstance(f.default, float):
            group.add_argument(flag, dest=f.name, type=float, default=argparse.SUPPRESS)
        else:
            group.add_argument(flag, dest=f.name, default=argparse.SUPPRESS)


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config and args.preset:
        raise ValueError("--config and --preset are mutually exclusive")
    if args.config:
        config = ExperimentConfig.load(args.config)
    elif args.preset:
        config = preset(args.preset)
    else:
        config = ExperimentConfig()
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(ExperimentConfig)
        if hasattr(args, f.name)
    }
    return config.replace(**overrides) if overrides else config


def _write_rows(path, rows: list[dict], drop: tuple[str, ...] = ()) -> None:
    rows = [{k: v for k, v in row.items() if k not in drop} for row in rows]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _cmd_gen_data(args) -> int:
    makers = {"d1": generate_d1, "d2": generate_d2, "toy": generate_toy}
    series = makers[args.dataset](args.points, seed=args.seed)
    save_csv(series, args.out)
    print(f"wrote {series.num_points} x {series.num_dims} series to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _build_config(args)
    seeds = tuple(args.seeds) if args.seeds is not None else (config.seed,)
    manifest, per_seed = run_experiment(config, args.out, seeds=seeds)
    for row in manifest.results:
        print(f"{row['metric']:>18}: {row['mean']:.4f} +- {row['std']:.4f}")
    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"artifacts under {args.out}")
    return 0


def _cmd_forecast(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    config = checkpoint.config if args.csv is None else checkpoint.config.replace(
        dataset="csv", csv_path=args.csv
    )
    series, windows = prepare_windows(config)
    x, truth = raw_window(series, windows, args.split, args.index)
    result = forecast(checkpoint, x, num_samples=args.samples, seed=args.seed)

    rows = []
    for step in range(result.point.shape[0]):
        for d in range(result.point.shape[1]):
            rows.append(
                {
                    "step": step,
                    "target_dim": int(windows.target_dims[d]),
                    "point": result.point[step, d],
                    "uncertainty": result.uncertainty[step, d],
                    "truth": truth[step, d] if truth.shape[0] > step else "",
                }
            )
    _write_rows(args.out, rows)
    print(f"wrote {len(rows)} forecast rows to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    config = checkpoint.config if args.csv is None else checkpoint.config.replace(
        dataset="csv", csv_path=args.csv
    )
    _, windows = prepare_windows(config)
    metrics = evaluate_split(
        checkpoint, windows, args.split, num_samples=args.samples, seed=args.seed, capture_latents=True
    )
    latent_state = metrics.pop("latent_state")
    latents = metrics.pop("latents")

    from .disentangle import FactorBatch  # local: keep module import list short

    metrics["tc"] = float(tc_loss(FactorBatch.from_latent(latent_state)))
    # Self-factor protocol: each chain variable's own discretized
    # dimensions serve as the factors the other dimensions are scored
    # against.
    migs = []
    for i in range(latents.shape[1]):
        factors = discretize_equal_frequency(latents[:, i, :], num_bins=10)
        migs.append(mig(latents[:, i, :], factors))
    metrics["mig_self"] = float(np.mean(migs))
    metrics["climatology"] = climatology_metrics(windows, args.split)

    if args.probe_epochs > 0:
        import torch

        _, probe_history = train_discriminator(
            torch.as_tensor(latents, dtype=torch.float32), epochs=args.probe_epochs
        )
        metrics["probe_final_loss"] = probe_history[-1]
        if args.probe_out:
            _write_rows(
                args.probe_out,
                [{"epoch": i + 1, "loss": v} for i, v in enumerate(probe_history)],
            )

    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_ablate(args) -> int:
    config = _build_config(args)
    _, windows = prepare_windows(config)
    rows = ablation_suite(config, windows, seeds=tuple(args.seeds))
    _write_rows(args.out, rows, drop=("per_seed_mse",))
    failures = [r for r in rows if r["error"]]
    for row in rows:
        if row["error"]:
            print(f"{row['variant']:>28}: FAILED ({row['error']})")
        else:
            print(
                f"{row['variant']:>28}: mse {row['mse_mean']:.4f} +- {row['mse_std']:.4f}  "
                f"crps {row['crps_mean']:.4f} +- {row['crps_std']:.4f}"
            )
    print(f"wrote {args.out}")
    return 1 if failures else 0


def _cmd_sweep(args) -> int:
    config = _build_config(args)
    _, windows = prepare_windows(config)
    rows = sweep_schedule(
        config, windows, tuple(args.beta_ends), tuple(args.steps_grid), max_epochs=args.epochs
    )
    _write_rows(args.out, rows)
    failures = [r for r in rows if r["error"]]
    print(f"wrote {len(rows)} cells ({len(failures)} failed) to {args.out}")
    return 1 if failures else 0


def _cmd_inspect_diffusion(args) -> int:
    config = _build_config(args)
    series = load_dataset(config)
    schedule = build_schedule(config.beta_start, config.beta_end, config.diffusion_steps, config.omega)
    records = diffusion_inspect(series, schedule, tuple(args.t), seed=config.seed)
    rows = []
    for record in records:
        snap = record["snapshot"]
        for row_idx in range(snap.shape[0]):
            for col in range(snap.shape[1]):
                rows.append(
                    {"t": record["t"], "row": row_idx, "column": col, "value": snap[row_idx, col]}
                )
    _write_rows(args.out, rows)
    for record in records:
        print(f"t={record['t']:>5}  deviation norm {record['deviation_norm']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic series to CSV")
    p.add_argument("--dataset", choices=["d1", "d2", "toy"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=800)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train across seeds and aggregate metrics")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", type=_parse_int_tuple, default=None, help="e.g. 0,1,2,3,4")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("forecast", help="forecast one window from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--csv", default=None, help="score against this CSV instead of the training data")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV for the forecast rows")
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="where to write the metrics JSON")
    p.add_argument("--probe-epochs", type=int, default=0, help="train the latent probe this long")
    p.add_argument("--probe-out", default=None, help="CSV for the probe loss curve")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the six-variant ablation suite")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=_parse_int_tuple, default=(0, 1, 2, 3, 4))
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep", help="grid over beta_end and diffusion steps")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--beta-ends", type=lambda s: tuple(float(x) for x in s.split(",")), required=True)
    p.add_argument("--steps-grid", type=_parse_int_tuple, required=True)
    p.add_argument("--epochs", type=int, default=None, help="override epoch budget per cell")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("inspect-diffusion", help="snapshot a series at chosen diffusion steps")
    _add_config_flags(p)
    p.add_argument("--t", type=_parse_int_tuple, required=True, help="steps, e.g. 0,10,100")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inspect_diffusion)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
