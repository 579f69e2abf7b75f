"""Sampling-based forecasting and its metrics.

Forecasting never corrupts the input: the raw window enters the encoder,
S generative samples come out, each is cleaned by the energy gradient
jump, and the cleaned samples are averaged into the point forecast and
denormalized.  Metrics live on both the normalized and the raw scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .config import ExperimentConfig
from .data import RawSeries, SeriesWindowSet
from .denoise import denoise_jump
from .schedule import DiffusionSchedule, diffuse
from .train import Checkpoint, train

_CHUNK = 4096  # max windows x samples pushed through the model at once


def mse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def crps(samples: np.ndarray, truth: np.ndarray, unbiased: bool = False) -> float:
    """Empirical CRPS of an ensemble against observed values.

        CRPS = E|X - y| - 0.5 * E|X - X'|

    ``samples`` has the ensemble on axis 0, shape (S, *truth.shape); the
    score is computed per point and averaged.  The spread term enumerates
    all S^2 ordered pairs (self-pairs included); ``unbiased`` switches its
    denominator to S*(S-1).  A single sample reduces exactly to the MAE.
    """
    samples, truth = np.asarray(samples, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if samples.ndim != truth.ndim + 1 or samples.shape[1:] != truth.shape:
        raise ValueError(f"samples shape {samples.shape} incompatible with truth {truth.shape}")
    s = samples.shape[0]
    if s < 1:
        raise ValueError("need at least one sample")
    if unbiased and s < 2:
        raise ValueError("unbiased spread needs at least two samples")

    term1 = np.abs(samples - truth[None]).mean(axis=0)

    # Pairwise spread via the sorted identity:
    #   sum_{a,b} |x_a - x_b| = 2 * sum_k (2k - S + 1) * x_(k)
    ordered = np.sort(samples, axis=0)
    coeff = (2.0 * np.arange(s) - s + 1).reshape(s, *([1] * truth.ndim))
    pair_sum = 2.0 * (coeff * ordered).sum(axis=0)
    denom = s * (s - 1) if unbiased else s * s
    term2 = pair_sum / denom if denom > 0 else np.zeros_like(term1)

    return float(np.mean(term1 - 0.5 * term2))


@dataclass
class ForecastResult:
    """S generative samples for one input window, plus their summary.

    ``samples``, ``point`` and ``uncertainty`` are in raw data units;
    the ``*_norm`` twins stay on the normalized scale the model works on.
    ``uncertainty`` is the signed energy-gradient move sigma0^2 * grad E
    averaged over samples (zero when the energy model was disabled).
    """

    samples: np.ndarray  # (S, l_y, d')
    point: np.ndarray  # (l_y, d')
    uncertainty: np.ndarray  # (l_y, d')
    samples_norm: np.ndarray
    point_norm: np.ndarray
    uncertainty_norm: np.ndarray


def _sample_batch(model, energy, config: ExperimentConfig, x_norm: torch.Tensor, num_samples: int, generator):
    """Replicate windows, sample, clean.  Returns (samples, cleaned, moves).

    x_norm: (W, l_x, d).  Outputs are (W, S, l_y, d') tensors.
    """
    w = x_norm.shape[0]
    pieces_clean, pieces_move = [], []
    rep = x_norm.repeat_interleave(num_samples, dim=0)  # (W*S, l_x, d)
    for start in range(0, rep.shape[0], _CHUNK):
        chunk = rep[start : start + _CHUNK]
        with torch.no_grad():
            latent = model.encode(chunk, generator=generator)
            gen = model.decode(latent)
            raw = gen.sample(generator=generator)
        if config.use_dsm:
            cleaned, move = denoise_jump(energy, raw, t=0)
        else:
            cleaned, move = raw, torch.zeros_like(raw)
        pieces_clean.append(cleaned)
        pieces_move.append(move)
    cleaned = torch.cat(pieces_clean, dim=0).reshape(w, num_samples, *pieces_clean[0].shape[1:])
    moves = torch.cat(pieces_move, dim=0).reshape_as(cleaned)
    return cleaned, moves


def forecast(
    checkpoint: Checkpoint,
    x_window: np.ndarray,
    num_samples: int = 100,
    seed: int = 0,
) -> ForecastResult:
    """Generate S forecasts for one raw-unit input window.

    The window must be (input_length, num_dims) in the units of the
    training data; it is normalized with the checkpoint's statistics,
    never diffused, and each generated sample is cleaned by the energy
    jump before the point forecast (the sample mean) is formed.
    """
    config = checkpoint.config
    x_window = np.asarray(x_window, dtype=np.float64)
    expected = (config.input_length, checkpoint.num_dims)
    if x_window.shape != expected:
        raise ValueError(f"window shape {x_window.shape} does not match checkpoint {expected}")
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")

    model, energy = checkpoint.build()
    generator = torch.Generator().manual_seed(int(seed))
    x_norm = torch.as_tensor(checkpoint.stats.normalize(x_window), dtype=torch.float32).unsqueeze(0)

    cleaned, moves = _sample_batch(model, energy, config, x_norm, num_samples, generator)
    cleaned, moves = cleaned[0], moves[0]  # (S, l_y, d')

    if config.clean_mean_forecast:
        # alternative composition: average first, clean the average
        raw_mean = (cleaned + moves).mean(dim=0, keepdim=True)
        if config.use_dsm:
            point_norm, move_mean = denoise_jump(energy, raw_mean, t=0)
            point_norm, move_mean = point_norm[0], move_mean[0]
        else:
            point_norm, move_mean = raw_mean[0], torch.zeros_like(raw_mean[0])
    else:
        point_norm = cleaned.mean(dim=0)
        move_mean = moves.mean(dim=0)

    samples_norm = cleaned.numpy().astype(np.float64)
    point_norm = point_norm.numpy().astype(np.float64)
    unc_norm = move_mean.numpy().astype(np.float64)
    dims = checkpoint.target_dims
    return ForecastResult(
        samples=checkpoint.stats.denormalize(samples_norm, dims),
        point=checkpoint.stats.denormalize(point_norm, dims),
        uncertainty=checkpoint.stats.denormalize_delta(unc_norm, dims),
        samples_norm=samples_norm,
        point_norm=point_norm,
        uncertainty_norm=unc_norm,
    )


def evaluate_split(
    checkpoint: Checkpoint,
    windows: SeriesWindowSet,
    split: str = "test",
    num_samples: int | None = None,
    seed: int = 0,
    capture_latents: bool = False,
) -> dict:
    """Forecast every window of a split and score it.

    Returns MSE of the point forecast and CRPS of the ensemble, on the
    normalized scale (keys ``mse``/``crps``) and in raw units
    (``mse_raw``/``crps_raw``).  With ``capture_latents`` the sampled
    latent chains for one pass over the split are included for
    disentanglement analysis.
    """
    config = checkpoint.config
    if num_samples is None:
        num_samples = config.eval_samples
    x = torch.as_tensor(windows.inputs[split], dtype=torch.float32)
    y_norm = np.asarray(windows.targets[split], dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError(f"split {split!r} holds no windows")

    model, energy = checkpoint.build()
    generator = torch.Generator().manual_seed(int(seed))
    cleaned, _ = _sample_batch(model, energy, config, x, num_samples, generator)
    samples_norm = cleaned.numpy().astype(np.float64)  # (W, S, l_y, d')
    point_norm = samples_norm.mean(axis=1)

    dims = windows.target_dims
    samples_raw = windows.stats.denormalize(samples_norm, dims)
    y_raw = windows.stats.denormalize(y_norm, dims)
    point_raw = windows.stats.denormalize(point_norm, dims)

    out = {
        "split": split,
        "num_windows": int(x.shape[0]),
        "num_samples": int(num_samples),
        "mse": mse(point_norm, y_norm),
        "crps": crps(np.moveaxis(samples_norm, 1, 0), y_norm),
        "mse_raw": mse(point_raw, y_raw),
        "crps_raw": crps(np.moveaxis(samples_raw, 1, 0), y_raw),
    }
    if capture_latents:
        with torch.no_grad():
            latent = model.encode(x, generator=generator)
        out["latents"] = latent.z.numpy().astype(np.float64)
        out["latent_state"] = latent
    return out


def climatology_metrics(windows: SeriesWindowSet, split: str = "test") -> dict:
    """Constant training-mean forecast, the baseline any model must beat.

    The forecast for every horizon step is the mean of the training
    targets (per dimension).  As a single-member ensemble its CRPS equals
    its MAE.
    """
    train_mean = windows.targets["train"].mean(axis=(0, 1))  # (d',)
    y_norm = windows.targets[split]
    pred = np.broadcast_to(train_mean, y_norm.shape)
    y_raw = windows.stats.denormalize(y_norm, windows.target_dims)
    pred_raw = windows.stats.denormalize(pred, windows.target_dims)
    return {
        "split": split,
        "mse": mse(pred, y_norm),
        "crps": crps(pred[None], y_norm),
        "mse_raw": mse(pred_raw, y_raw),
        "crps_raw": crps(pred_raw[None], y_raw),
    }


def sweep_schedule(
    config: ExperimentConfig,
    windows: SeriesWindowSet,
    beta_ends: tuple[float, ...],
    steps_grid: tuple[int, ...],
    max_epochs: int | None = None,
) -> list[dict]:
    """Train once per (beta_end, diffusion_steps) cell and record test scores.

    Failures are recorded in the row's ``error`` field and the sweep
    continues.  ``max_epochs`` optionally shortens every cell's budget.
    """
    rows = []
    for beta_end in beta_ends:
        for steps in steps_grid:
            row = {"beta_end": float(beta_end), "diffusion_steps": int(steps)}
            try:
                cfg = config.replace(beta_end=float(beta_end), diffusion_steps=int(steps))
                if max_epochs is not None:
                    cfg = cfg.replace(max_epochs=int(max_epochs))
                checkpoint, _ = train(cfg, windows)
                metrics = evaluate_split(checkpoint, windows, "test")
                row.update(mse=metrics["mse"], crps=metrics["crps"], error="")
            except Exception as err:  # noqa: BLE001 - sweep must reach every cell
                row.update(mse=float("nan"), crps=float("nan"), error=f"{type(err).__name__}: {err}")
            rows.append(row)
    return rows


def diffusion_inspect(
    series: RawSeries,
    schedule: DiffusionSchedule,
    t_list: tuple[int, ...],
    seed: int = 0,
) -> list[dict]:
    """Corrupt the whole series at chosen steps with one shared noise draw.

    Returns one record per requested step: the snapshot matrix and the
    Frobenius norm of its deviation from the original.  t=0 is allowed
    and returns the series unchanged; with a shared draw the deviation
    norm is non-decreasing in t.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(series.values.shape)
    records = []
    for t in t_list:
        t = int(t)
        if t == 0:
            snapshot = series.values.copy()
        else:
            snapshot = diffuse(series.values, t, schedule.alpha_bar, noise)
        records.append(
            {
                "t": t,
                "snapshot": snapshot,
                "deviation_norm": float(np.linalg.norm(snapshot - series.values)),
            }
        )
    return records
