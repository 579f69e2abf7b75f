"""End-to-end experiment runner: data -> seeds -> aggregate -> artifacts.

Every run leaves a manifest (config echo, dataset fingerprint, seeds,
artifact paths, timestamps) next to its outputs so results stay
attributable long after the shell history is gone.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import __version__
from .config import ExperimentConfig
from .data import (
    RawSeries,
    SeriesWindowSet,
    generate_d1,
    generate_d2,
    generate_toy,
    load_csv,
    make_windows,
    slice_fraction,
)
from .evaluate import climatology_metrics, evaluate_split
from .train import history_to_csv, train


def fingerprint(series: RawSeries) -> str:
    """sha256 over the shape and the little-endian float64 value bytes."""
    h = hashlib.sha256()
    h.update(f"{series.values.shape[0]}x{series.values.shape[1]}:".encode())
    h.update(np.ascontiguousarray(series.values, dtype="<f8").tobytes())
    return h.hexdigest()


def load_dataset(config: ExperimentConfig) -> RawSeries:
    """Materialize the series a config points at (generator or CSV)."""
    if config.dataset == "d1":
        series = generate_d1(config.num_points, seed=config.data_seed)
    elif config.dataset == "d2":
        series = generate_d2(config.num_points, seed=config.data_seed)
    elif config.dataset == "toy":
        series = generate_toy(config.num_points, seed=config.data_seed)
    elif config.dataset == "csv":
        series = load_csv(config.csv_path, config.target_dims)
    else:
        raise ValueError(f"unknown dataset {config.dataset!r}")
    if config.dataset != "csv" and config.target_dims is not None:
        series = RawSeries(series.values, config.target_dims, name=series.name)
    if config.fraction < 1.0:
        series = slice_fraction(series, config.fraction)
    return series


def prepare_windows(config: ExperimentConfig, series: RawSeries | None = None) -> tuple[RawSeries, SeriesWindowSet]:
    if series is None:
        series = load_dataset(config)
    windows = make_windows(
        series,
        config.input_length,
        config.output_length,
        config.split_ratios,
        config.normalize,
    )
    return series, windows


def raw_window(series: RawSeries, windows: SeriesWindowSet, split: str, index: int) -> tuple[np.ndarray, np.ndarray]:
    """The raw-unit (input, truth) pair behind a split's window index."""
    offsets = {"train": 0, "val": windows.boundaries[0], "test": windows.boundaries[1]}
    count = windows.inputs[split].shape[0]
    if not 0 <= index < count:
        raise ValueError(f"window index {index} outside [0, {count}) for split {split!r}")
    start = offsets[split] + index
    x = series.values[start : start + windows.input_length]
    y = series.values[
        start + windows.input_length : start + windows.input_length + windows.output_length
    ][:, list(windows.target_dims)]
    return x, y


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Audit record written before training starts and finalized after."""

    config: dict
    seeds: list[int]
    dataset_fingerprint: str
    package_version: str = __version__
    started_at: str = field(default_factory=_now)
    finished_at: str | None = None
    artifacts: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    results: list[dict] = field(default_factory=list)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")


def _aggregate(rows: list[dict], dataset: str, output_length: int, num_seeds: int) -> list[dict]:
    """mean +- population std per metric across seed rows."""
    out = []
    for metric in ("mse", "crps", "mse_raw", "crps_raw"):
        values = np.array([r[metric] for r in rows], dtype=np.float64)
        out.append(
            {
                "dataset": dataset,
                "output_length": output_length,
                "metric": metric,
                "mean": float(values.mean()),
                "std": float(values.std()),  # population std, ddof=0
                "num_seeds": num_seeds,
            }
        )
    return out


def run_experiment(
    config: ExperimentConfig,
    out_dir,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
) -> tuple[RunManifest, list[dict]]:
    """Train/evaluate one config across seeds and aggregate the metrics.

    Writes ``manifest.json``, ``config.json``, ``results.csv`` and one
    ``seed<k>/`` directory (checkpoint + epoch history) per seed under
    ``out_dir``.  Seeds that fail are skipped with a recorded warning;
    aggregation covers the survivors.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series, windows = prepare_windows(config)

    manifest = RunManifest(
        config=config.to_dict(),
        seeds=list(seeds),
        dataset_fingerprint=fingerprint(series),
        artifacts={
            "config": str(out / "config.json"),
            "results": str(out / "results.csv"),
            "windows": str(out / "windows.json"),
        },
    )
    config.save(out / "config.json")
    (out / "windows.json").write_text(json.dumps(windows.summary(), indent=2) + "\n")
    manifest.save(out / "manifest.json")  # snapshot before the long part

    per_seed: list[dict] = []
    for seed in seeds:
        seed_dir = out / f"seed{seed}"
        seed_dir.mkdir(exist_ok=True)
        try:
            cfg = config.replace(seed=seed)
            checkpoint, history = train(cfg, windows)
            checkpoint.save(seed_dir / "best.ckpt")
            history_to_csv(history, seed_dir / "metrics.csv")
            metrics = evaluate_split(checkpoint, windows, "test", seed=seed)
            metrics["seed"] = seed
            per_seed.append(metrics)
            manifest.artifacts[f"seed{seed}"] = str(seed_dir)
        except Exception as err:  # noqa: BLE001 - one bad seed must not sink the run
            manifest.warnings.append(f"seed {seed} failed: {type(err).__name__}: {err}")

    if not per_seed:
        manifest.finished_at = _now()
        manifest.save(out / "manifest.json")
        raise RuntimeError(f"all {len(seeds)} seeds failed; see {out / 'manifest.json'}")

    results = _aggregate(per_seed, series.name, config.output_length, len(per_seed))
    baseline = climatology_metrics(windows)
    results.append(
        {
            "dataset": series.name,
            "output_length": config.output_length,
            "metric": "crps_climatology",
            "mean": baseline["crps"],
            "std": 0.0,
            "num_seeds": len(per_seed),
        }
    )

    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(results[0].keys()))
        writer.writeheader()
        writer.writerows(results)

    manifest.results = results
    manifest.finished_at = _now()
    manifest.save(out / "manifest.json")
    return manifest, per_seed


class RecurrentBaseline(nn.Module):
    """Two-layer GRU point forecaster used by the overfitting study."""

    def __init__(self, num_dims: int, num_targets: int, output_length: int, hidden: int = 64):
        super().__init__()
        self.rnn = nn.GRU(num_dims, hidden, num_layers=2, batch_first=True)
        self.head = nn.Linear(hidden, output_length * num_targets)
        self.output_length = output_length
        self.num_targets = num_targets

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _, h = self.rnn(x)
        out = self.head(h[-1])
        return out.reshape(-1, self.output_length, self.num_targets)


def toy_overfit_demo(
    point_counts: tuple[int, ...] = (400, 800, 1600),
    epochs: int = 100,
    seed: int = 0,
    out_dir=None,
) -> dict[int, list[dict]]:
    """Train the small recurrent baseline on shrinking toy series.

    For each point count: generate the toy series, window it with a 7:3
    chronological split (no validation), train for the full epoch budget,
    and record train/test MSE per epoch.  The instructive picture is the
    smallest series, where test loss bottoms out and climbs again while
    train loss keeps falling.
    """
    curves: dict[int, list[dict]] = {}
    for count in point_counts:
        if count < 32:
            raise ValueError(f"need >= 32 points, got {count}")
        series = generate_toy(count, seed=seed)
        windows = make_windows(series, 8, 8, ratios=(7, 0, 3))
        x_train = torch.as_tensor(windows.inputs["train"], dtype=torch.float32)
        y_train = torch.as_tensor(windows.targets["train"], dtype=torch.float32)
        x_test = torch.as_tensor(windows.inputs["test"], dtype=torch.float32)
        y_test = torch.as_tensor(windows.targets["test"], dtype=torch.float32)

        torch.manual_seed(seed)
        model = RecurrentBaseline(windows.num_dims, len(windows.target_dims), windows.output_length)
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)
        history = []
        n = x_train.shape[0]
        for epoch in range(1, epochs + 1):
            model.train()
            perm = torch.randperm(n)
            total = 0.0
            for start in range(0, n, 16):
                idx = perm[start : start + 16]
                loss = ((model(x_train[idx]) - y_train[idx]) ** 2).mean()
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(idx)
            model.eval()
            with torch.no_grad():
                test_mse = float(((model(x_test) - y_test) ** 2).mean())
            history.append({"epoch": epoch, "train_mse": total / n, "test_mse": test_mse})
        curves[count] = history

        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / f"overfit_{count}.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=["epoch", "train_mse", "test_mse"])
                writer.writeheader()
                writer.writerows(history)
    return curves
