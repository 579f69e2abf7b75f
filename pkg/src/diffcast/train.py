"""Training loop, loss assembly, checkpointing and the ablation suite.

One optimization step follows the augmented-objective recipe: draw a
diffusion step t, corrupt input and target through their coupled chains,
push the corrupted input through the VAE, sample a generated window, and
combine four terms

    loss = kl_weight * KL + dsm_weight * DSM + tc_weight * TC + MSE

where the MSE is taken against the corrupted target (the generator's
regression target at step t).  Early stopping tracks the validation MSE
of the cleaned point forecast.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass

import numpy as np
import torch

from .config import ExperimentConfig
from .data import NormStats, SeriesWindowSet
from .denoise import EnergyNet, denoise_jump, dsm_loss
from .disentangle import FactorBatch, tc_loss
from .model import ForecastVAE, kl_target, step_values
from .schedule import DiffusionSchedule, build_schedule

CHECKPOINT_VERSION = 1

LOSS_COMPONENTS = ("kl", "dsm", "tc", "mse")


class TrainingError(RuntimeError):
    """Raised when optimization hits a non-finite state."""


def total_loss(components: dict, weights) -> torch.Tensor:
    """Weighted sum of the four loss terms; the MSE enters unweighted.

    ``weights`` is anything with kl_weight/dsm_weight/tc_weight
    attributes (an ExperimentConfig) or a mapping with those keys.
    Raises if any component is non-finite, naming the culprit.
    """
    if isinstance(weights, dict):
        w = weights
    else:
        w = {k: getattr(weights, k) for k in ("kl_weight", "dsm_weight", "tc_weight")}
    for name in LOSS_COMPONENTS:
        if name not in components:
            raise ValueError(f"missing loss component {name!r}")
        value = components[name]
        value = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(value):
            raise ValueError(f"loss component {name!r} is non-finite ({value})")
    return (
        w["kl_weight"] * components["kl"]
        + w["dsm_weight"] * components["dsm"]
        + w["tc_weight"] * components["tc"]
        + components["mse"]
    )


@dataclass
class Checkpoint:
    """Self-contained trained bundle: config echo, weights, data statistics."""

    config: ExperimentConfig
    model_state: dict
    energy_state: dict
    stats: NormStats
    num_dims: int
    target_dims: tuple[int, ...]
    best_val_mse: float
    version: int = CHECKPOINT_VERSION

    def build(self) -> tuple[ForecastVAE, EnergyNet]:
        """Reconstruct the modules in eval mode."""
        model, energy = build_modules(self.config, self.num_dims, len(self.target_dims))
        model.load_state_dict(self.model_state)
        energy.load_state_dict(self.energy_state)
        model.eval()
        energy.eval()
        return model, energy

    def save(self, path) -> None:
        torch.save(
            {
                "version": self.version,
                "config": self.config.to_dict(),
                "model_state": self.model_state,
                "energy_state": self.energy_state,
                "stats_mean": self.stats.mean.tolist(),
                "stats_scale": self.stats.scale.tolist(),
                "num_dims": self.num_dims,
                "target_dims": list(self.target_dims),
                "best_val_mse": self.best_val_mse,
            },
            path,
        )

    @classmethod
    def load(cls, path, expected_config: ExperimentConfig | None = None) -> "Checkpoint":
        raw = torch.load(path, weights_only=True)
        version = raw.get("version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {version!r} not supported (expected {CHECKPOINT_VERSION})"
            )
        config = ExperimentConfig.from_dict(raw["config"])
        if expected_config is not None and config != expected_config:
            raise ValueError("checkpoint config does not match the expected config")
        return cls(
            config=config,
            model_state=raw["model_state"],
            energy_state=raw["energy_state"],
            stats=NormStats(
                mean=np.asarray(raw["stats_mean"], dtype=np.float64),
                scale=np.asarray(raw["stats_scale"], dtype=np.float64),
            ),
            num_dims=int(raw["num_dims"]),
            target_dims=tuple(int(i) for i in raw["target_dims"]),
            best_val_mse=float(raw["best_val_mse"]),
            version=int(version),
        )


def build_modules(config: ExperimentConfig, num_dims: int, num_targets: int) -> tuple[ForecastVAE, EnergyNet]:
    model = ForecastVAE(
        num_dims=num_dims,
        target_dims=num_targets,
        input_length=config.input_length,
        output_length=config.output_length,
        num_blocks=config.num_blocks,
        latent_dim=config.latent_dim,
        embed_dim=config.embed_dim,
        rnn_hidden=config.rnn_hidden,
        rnn_layers=config.rnn_layers,
        block_width=config.block_width,
    )
    energy = EnergyNet(
        output_length=config.output_length,
        target_dims=num_targets,
        hidden=config.energy_hidden,
        sigma0=config.sigma0,
        condition_on_step=config.energy_step_conditioning,
        max_steps=config.diffusion_steps,
    )
    return model, energy


def diffuse_batch(x: torch.Tensor, t, chain, noise: torch.Tensor, sqrt_noise_coeff: bool = False) -> torch.Tensor:
    """Torch counterpart of schedule.diffuse, accepting per-sample steps."""
    a = step_values(chain, t, x)
    coeff = torch.sqrt(1.0 - a) if sqrt_noise_coeff else 1.0 - a
    return torch.sqrt(a) * x + coeff * noise


def _validation_mse(model, energy, config, x_val: torch.Tensor, y_val: torch.Tensor, seed: int) -> float:
    """MSE of the cleaned point forecast on the raw (undiffused) val windows."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        preds = []
        for start in range(0, x_val.shape[0], 512):
            chunk = x_val[start : start + 512]
            latent = model.encode(chunk, generator=generator)
            preds.append(model.decode(latent).mean)
        point = torch.cat(preds, dim=0)
    if config.use_dsm:
        point, _ = denoise_jump(energy, point, t=0)
    return float(((point - y_val) ** 2).mean())


def train(config: ExperimentConfig, windows: SeriesWindowSet) -> tuple[Checkpoint, list[dict]]:
    """Fit the generator (and energy model) on prepared windows.

    Returns the best checkpoint (by validation MSE of the cleaned point
    forecast; training MSE when there is no validation split) and the
    per-epoch history.  Fully deterministic for a fixed config and seed.
    """
    torch.manual_seed(config.seed)
    schedule = build_schedule(config.beta_start, config.beta_end, config.diffusion_steps, config.omega)

    x_train = torch.as_tensor(windows.inputs["train"], dtype=torch.float32)
    y_train = torch.as_tensor(windows.targets["train"], dtype=torch.float32)
    x_val = torch.as_tensor(windows.inputs["val"], dtype=torch.float32)
    y_val = torch.as_tensor(windows.targets["val"], dtype=torch.float32)
    has_val = x_val.shape[0] > 0

    model, energy = build_modules(config, windows.num_dims, len(windows.target_dims))
    if config.alternate_energy_updates:
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        energy_optimizer = torch.optim.Adam(energy.parameters(), lr=config.learning_rate)
    else:
        optimizer = torch.optim.Adam(
            list(model.parameters()) + list(energy.parameters()), lr=config.learning_rate
        )
        energy_optimizer = None

    count = x_train.shape[0]
    if count < 1:
        raise ValueError("no training windows")
    batch_size = min(config.batch_size, count)

    history: list[dict] = []
    best_val = math.inf
    best_states: tuple[dict, dict] | None = None
    patience_left = config.patience

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        energy.train()
        perm = torch.randperm(count)
        sums = {name: 0.0 for name in LOSS_COMPONENTS} | {"loss": 0.0}
        num_batches = 0
        for batch_index, start in enumerate(range(0, count, batch_size), start=1):
            idx = perm[start : start + batch_size]
            x, y = x_train[idx], y_train[idx]

            if config.per_sample_t:
                t = torch.randint(1, config.diffusion_steps + 1, (x.shape[0],))
            else:
                t = int(torch.randint(1, config.diffusion_steps + 1, (1,)))

            x_in = x
            if config.diffuse_input:
                x_in = diffuse_batch(x, t, schedule.alpha_bar, torch.randn_like(x), config.sqrt_noise_coeff)
            y_ref = y
            if config.diffuse_target:
                y_ref = diffuse_batch(
                    y, t, schedule.alpha_bar_prime, torch.randn_like(y), config.sqrt_noise_coeff
                )

            latent = model.encode(x_in)
            gen = model.decode(latent)
            y_hat = gen.sample()

            components = {
                "kl": kl_target(
                    gen, y, schedule, t,
                    diffused=config.diffuse_target,
                    sqrt_noise_coeff=config.sqrt_noise_coeff,
                ),
                "dsm": dsm_loss(energy, y, y_hat, schedule, t)
                if config.use_dsm
                else torch.zeros(()),
                "tc": tc_loss(FactorBatch.from_latent(latent))
                if x.shape[0] > 1
                else torch.zeros(()),
                "mse": ((y_hat - y_ref) ** 2).mean(),
            }
            try:
                loss = total_loss(components, config)
            except ValueError as err:
                raise TrainingError(f"epoch {epoch}, batch {batch_index}: {err}") from err

            if config.alternate_energy_updates and config.use_dsm:
                # energy model first, against detached generator output
                e_loss = dsm_loss(energy, y, y_hat.detach().requires_grad_(True), schedule, t)
                energy_optimizer.zero_grad()
                e_loss.backward()
                torch.nn.utils.clip_grad_norm_(energy.parameters(), config.grad_clip)
                energy_optimizer.step()
                loss = total_loss({**components, "dsm": torch.zeros(())}, config)

            optimizer.zero_grad()
            loss.backward()
            if energy_optimizer is None:
                torch.nn.utils.clip_grad_norm_(
                    list(model.parameters()) + list(energy.parameters()), config.grad_clip
                )
            else:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()

            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise TrainingError(f"epoch {epoch}, batch {batch_index}: non-finite total loss")
            sums["loss"] += loss_value
            for name in LOSS_COMPONENTS:
                value = components[name]
                sums[name] += float(value.detach()) if torch.is_tensor(value) else float(value)
            num_batches += 1

        model.eval()
        energy.eval()
        if has_val:
            val_mse = _validation_mse(model, energy, config, x_val, y_val, seed=config.seed + epoch)
        else:
            val_mse = _validation_mse(model, energy, config, x_train, y_train, seed=config.seed + epoch)
        row = {name: sums[name] / num_batches for name in sums}
        row.update(epoch=epoch, val_mse=val_mse)
        history.append(row)

        if val_mse < best_val:
            best_val = val_mse
            best_states = (
                copy.deepcopy(model.state_dict()),
                copy.deepcopy(energy.state_dict()),
            )
            patience_left = config.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break

    model_state, energy_state = best_states
    checkpoint = Checkpoint(
        config=config,
        model_state=model_state,
        energy_state=energy_state,
        stats=windows.stats,
        num_dims=windows.num_dims,
        target_dims=windows.target_dims,
        best_val_mse=best_val,
    )
    return checkpoint, history


def history_to_csv(history: list[dict], path) -> None:
    if not history:
        return
    fields = ["epoch", "loss", "val_mse", *LOSS_COMPONENTS]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(history)


# The six ablation variants: which corruption paths and loss terms stay on.
ABLATION_VARIANTS: dict[str, dict] = {
    "full": {},
    "no_target_diffusion": {"diffuse_target": False},
    "no_input_diffusion": {"diffuse_input": False},
    "no_diffusion": {"diffuse_input": False, "diffuse_target": False},
    "no_target_diffusion_no_dsm": {"diffuse_target": False, "use_dsm": False},
    "no_diffusion_no_dsm": {
        "diffuse_input": False,
        "diffuse_target": False,
        "use_dsm": False,
    },
}


def ablation_suite(
    config: ExperimentConfig,
    windows: SeriesWindowSet,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
) -> list[dict]:
    """Train and evaluate every ablation variant over the given seeds.

    Returns one row per variant with mean/std of test MSE and CRPS
    (population std).  A variant that fails is reported with its error
    message; the remaining variants still run.
    """
    from .evaluate import evaluate_split  # deferred: evaluate depends on this module

    rows = []
    for variant, changes in ABLATION_VARIANTS.items():
        try:
            mses, crpss = [], []
            for seed in seeds:
                cfg = config.replace(seed=seed, **changes)
                checkpoint, _ = train(cfg, windows)
                metrics = evaluate_split(checkpoint, windows, "test")
                mses.append(metrics["mse"])
                crpss.append(metrics["crps"])
            rows.append(
                {
                    "variant": variant,
                    "mse_mean": float(np.mean(mses)),
                    "mse_std": float(np.std(mses)),
                    "crps_mean": float(np.mean(crpss)),
                    "crps_std": float(np.std(crpss)),
                    "num_seeds": len(seeds),
                    "per_seed_mse": [float(v) for v in mses],
                    "error": "",
                }
            )
        except Exception as err:  # noqa: BLE001 - suite must survive one bad variant
            rows.append(
                {
                    "variant": variant,
                    "mse_mean": float("nan"),
                    "mse_std": float("nan"),
                    "crps_mean": float("nan"),
                    "crps_std": float("nan"),
                    "num_seeds": 0,
                    "per_seed_mse": [],
                    "error": f"{type(err).__name__}: {err}",
                }
            )
    return rows
