"""Generative time-series forecasting with coupled diffusion augmentation.

Input windows and their forecast targets are corrupted along a pair of
coupled noise schedules during training; a hierarchical VAE learns to
generate the (mildly corrupted) target, an energy model learns to scrub
the residual noise off generated forecasts, and a total-correlation
penalty keeps the latent factors disentangled.
"""

__version__ = "0.1.0"

from .config import SCHEDULE_PRESETS, WEIGHT_PRESETS, ExperimentConfig, preset
from .data import (
    NormStats,
    RawSeries,
    SeriesWindowSet,
    generate_d1,
    generate_d2,
    generate_synthetic,
    generate_toy,
    load_csv,
    make_windows,
    save_csv,
    slice_fraction,
)
from .denoise import EnergyNet, denoise_jump, dsm_loss, multistep_denoise
from .disentangle import FactorBatch, mig, tc_loss, train_discriminator
from .evaluate import (
    ForecastResult,
    climatology_metrics,
    crps,
    diffusion_inspect,
    evaluate_split,
    forecast,
    mae,
    mse,
    sweep_schedule,
)
from .model import ForecastVAE, GenerativeOutput, LatentState, kl_target, latent_kl
from .pipeline import (
    RunManifest,
    fingerprint,
    load_dataset,
    prepare_windows,
    raw_window,
    run_experiment,
    toy_overfit_demo,
)
from .schedule import DiffusionSchedule, build_schedule, coupled_diffuse, diffuse
from .train import (
    ABLATION_VARIANTS,
    Checkpoint,
    TrainingError,
    ablation_suite,
    total_loss,
    train,
)

__all__ = [
    "ABLATION_VARIANTS",
    "Checkpoint",
    "DiffusionSchedule",
    "EnergyNet",
    "ExperimentConfig",
    "FactorBatch",
    "ForecastResult",
    "ForecastVAE",
    "GenerativeOutput",
    "LatentState",
    "NormStats",
    "RawSeries",
    "RunManifest",
    "SCHEDULE_PRESETS",
    "SeriesWindowSet",
    "TrainingError",
    "WEIGHT_PRESETS",
    "ablation_suite",
    "build_schedule",
    "climatology_metrics",
    "coupled_diffuse",
    "crps",
    "denoise_jump",
    "diffuse",
    "diffusion_inspect",
    "dsm_loss",
    "evaluate_split",
    "fingerprint",
    "forecast",
    "generate_d1",
    "generate_d2",
    "generate_synthetic",
    "generate_toy",
    "kl_target",
    "latent_kl",
    "load_csv",
    "load_dataset",
    "mae",
    "make_windows",
    "mig",
    "mse",
    "multistep_denoise",
    "prepare_windows",
    "preset",
    "raw_window",
    "run_experiment",
    "save_csv",
    "slice_fraction",
    "sweep_schedule",
    "tc_loss",
    "total_loss",
    "toy_overfit_demo",
    "train",
    "train_discriminator",
]
