"""Total-correlation regularization and disentanglement measurement.

The training loss carries a total-correlation penalty per latent chain
variable, estimated from the minibatch with importance-weighted Gaussian
posteriors.  For inspection there is a mutual-information-gap score over
discretized latents and a small regression probe that tries to identify
latent coordinates from their values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from sklearn.metrics import mutual_info_score


@dataclass
class FactorBatch:
    """A batch of latent samples with their diagonal-Gaussian posteriors.

    Tensors of shape (B, n, m): n chain variables, m factor dimensions.
    """

    z: torch.Tensor
    mean: torch.Tensor
    log_scale: torch.Tensor

    def __post_init__(self) -> None:
        if self.z.shape != self.mean.shape or self.z.shape != self.log_scale.shape:
            raise ValueError("z, mean and log_scale must share a shape")
        if self.z.ndim != 3:
            raise ValueError(f"expected (B, n, m) tensors, got shape {tuple(self.z.shape)}")

    @staticmethod
    def from_latent(latent) -> "FactorBatch":
        return FactorBatch(z=latent.z, mean=latent.mean, log_scale=latent.log_scale)


def _log_gauss(z: torch.Tensor, mean: torch.Tensor, log_scale: torch.Tensor) -> torch.Tensor:
    """log N(z; mean, exp(log_scale)^2), elementwise."""
    inv_var = torch.exp(-2.0 * log_scale)
    return -0.5 * ((z - mean) ** 2 * inv_var) - log_scale - 0.5 * math.log(2.0 * math.pi)


def tc_loss(batch: FactorBatch) -> torch.Tensor:
    """Minibatch estimate of the mean total correlation over chain variables.

        TC(z_i) = E_q [ log q(z_i) - sum_j log q(z_{i,j}) ]

    The aggregate posterior q is approximated by the uniform mixture of
    the batch posteriors (log-mean-exp over the batch), which makes the
    estimate exactly zero when every posterior is the same factorized
    Gaussian.  Differentiable; used directly as the training penalty.
    """
    b = batch.z.shape[0]
    if b < 2:
        raise ValueError(f"need a batch of >= 2 samples, got {b}")
    # pairwise log q(z_a | x_b) per variable and dimension: (B, B, n, m)
    logq = _log_gauss(
        batch.z.unsqueeze(1),
        batch.mean.unsqueeze(0),
        batch.log_scale.unsqueeze(0),
    )
    log_b = math.log(b)
    # log q(z_i): mixture over the batch of joint (per-variable) Gaussians
    log_joint = torch.logsumexp(logq.sum(dim=3), dim=1) - log_b  # (B, n)
    # log prod_j q(z_{i,j}): mixture per dimension
    log_marginals = (torch.logsumexp(logq, dim=1) - log_b).sum(dim=2)  # (B, n)
    return (log_joint - log_marginals).mean()


def discretize_equal_frequency(values: np.ndarray, num_bins: int = 20) -> np.ndarray:
    """Map each column of (N, D) values to equal-frequency bin indices."""
    values = np.asarray(values, dtype=np.float64)
    flat = values.reshape(values.shape[0], -1)
    codes = np.empty_like(flat, dtype=np.int64)
    edges = np.quantile(flat, np.linspace(0.0, 1.0, num_bins + 1)[1:-1], axis=0)
    for j in range(flat.shape[1]):
        codes[:, j] = np.searchsorted(edges[:, j], flat[:, j], side="left")
    return codes.reshape(values.shape)


def _entropy(labels: np.ndarray) -> float:
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def mig(latents: np.ndarray, factors: np.ndarray, num_bins: int = 20) -> float:
    """Mutual-information gap between latent dimensions and known factors.

    ``latents`` is (N, n, m) (or (N, m), treated as a single chain
    variable) of continuous values; ``factors`` is (N, K) of discrete
    codes with K >= 2.  Latents are discretized into ``num_bins``
    equal-frequency bins.  For each latent scalar the gap between its two
    largest mutual informations across factors is taken, weighted by the
    mean inverse factor entropy, then averaged over dimensions and over
    chain variables.  With equal-entropy factors the score lies in [0, 1].
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim == 2:
        latents = latents[:, None, :]
    if latents.ndim != 3:
        raise ValueError(f"latents must be (N, n, m) or (N, m), got shape {latents.shape}")
    factors = np.asarray(factors)
    if factors.ndim != 2 or factors.shape[1] < 2:
        raise ValueError("factors must be (N, K) with K >= 2")
    if factors.shape[0] != latents.shape[0]:
        raise ValueError("latents and factors disagree on sample count")

    entropies = np.array([_entropy(factors[:, k]) for k in range(factors.shape[1])])
    if np.any(entropies <= 0):
        dead = int(np.argmin(entropies))
        raise ValueError(f"factor {dead} has zero entropy; gap is undefined")
    inv_entropy_weight = float(np.mean(1.0 / entropies))

    n_samples, n_vars, n_dims = latents.shape
    codes = discretize_equal_frequency(latents.reshape(n_samples, -1), num_bins)
    codes = codes.reshape(n_samples, n_vars, n_dims)

    per_variable = np.empty(n_vars)
    for i in range(n_vars):
        gaps = np.empty(n_dims)
        for j in range(n_dims):
            mi = np.array(
                [mutual_info_score(codes[:, i, j], factors[:, k]) for k in range(factors.shape[1])]
            )
            order = np.sort(mi)
            gaps[j] = (order[-1] - order[-2]) * inv_entropy_weight
        per_variable[i] = gaps.mean()
    return float(per_variable.mean())


class LatentProbe(nn.Module):
    """Regressor that tries to recover a coordinate index from its value."""

    def __init__(self, num_variables: int, hidden: int = 100, depth: int = 6, conditioned: bool = True):
        super().__init__()
        self.conditioned = conditioned
        in_dim = 1 + (num_variables if conditioned else 0)
        layers: list[nn.Module] = []
        width = in_dim
        for _ in range(depth):
            layers += [nn.Linear(width, hidden), nn.ReLU()]
            width = hidden
        layers.append(nn.Linear(width, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, value: torch.Tensor, variable_onehot: torch.Tensor | None = None) -> torch.Tensor:
        if self.conditioned:
            inp = torch.cat([value, variable_onehot], dim=-1)
        else:
            inp = value
        return self.net(inp).squeeze(-1)


def train_discriminator(
    latents: torch.Tensor,
    epochs: int = 20,
    batch_size: int = 256,
    lr: float = 1e-3,
    conditioned: bool = True,
    seed: int = 0,
) -> tuple[LatentProbe, list[float]]:
    """Fit the coordinate-identification probe on sampled latents.

    ``latents`` is (N, n, m).  Each scalar z_{i,j} becomes one example
    with regression label j (1-based); when ``conditioned`` the probe
    also sees a one-hot code of the chain index i, otherwise the raw
    value alone.  Returns the probe and the per-epoch mean squared
    label error — near-chance predictions plateau at the variance of the
    uniform label distribution, (m^2 - 1) / 12.
    """
    if latents.ndim != 3:
        raise ValueError(f"latents must be (N, n, m), got shape {tuple(latents.shape)}")
    n_samples, n_vars, n_dims = latents.shape
    torch.manual_seed(seed)
    probe = LatentProbe(n_vars, conditioned=conditioned)
    opt = torch.optim.Adam(probe.parameters(), lr=lr)

    values = latents.detach().reshape(-1, 1).float()
    var_index = torch.arange(n_vars).repeat_interleave(n_dims).repeat(n_samples)
    onehot = torch.nn.functional.one_hot(var_index, n_vars).float()
    labels = (torch.arange(n_dims, dtype=torch.float32) + 1.0).repeat(n_samples * n_vars)

    history: list[float] = []
    count = values.shape[0]
    for _ in range(epochs):
        perm = torch.randperm(count)
        total = 0.0
        for start in range(0, count, batch_size):
            idx = perm[start : start + batch_size]
            pred = probe(values[idx], onehot[idx])
            loss = ((pred - labels[idx]) ** 2).sum()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
        history.append(total / count)
    return probe, history
