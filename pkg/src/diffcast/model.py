"""Generative forecaster: sequence encoder, latent chain, Gaussian decoder.

The input window is embedded (learned value projection plus sinusoidal
position codes), run through a two-layer GRU, and the GRU features are
concatenated with the embeddings.  A stack of residual blocks then
produces a chain of latent variables z_1..z_n — the posterior of each
z_{i+1} conditions on both the pooled input features and the sampled
z_i — and a mirrored stack with additive skip connections from the
encoder blocks decodes the chain into a diagonal Gaussian over the
forecast window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

LOG_SCALE_MIN = -7.0
LOG_SCALE_MAX = 2.0


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Classic fixed sin/cos position codes, shape (length, dim)."""
    position = torch.arange(length, dtype=dtype).unsqueeze(1)
    half = dim // 2
    freq = torch.exp(torch.arange(half, dtype=dtype) * (-math.log(10000.0) / max(half - 1, 1)))
    table = torch.zeros(length, dim, dtype=dtype)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq[: dim - half])
    return table


class InputRepresentation(nn.Module):
    """CONCAT(GRU(E(X)), E(X)) feature extractor over the input window."""

    def __init__(self, num_dims: int, embed_dim: int = 64, rnn_hidden: int = 128, rnn_layers: int = 2):
        super().__init__()
        self.value_embed = nn.Linear(num_dims, embed_dim)
        self.rnn = nn.GRU(embed_dim, rnn_hidden, num_layers=rnn_layers, batch_first=True)
        self.out_dim = rnn_hidden + embed_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, L, d) -> (B, L, rnn_hidden + embed_dim)
        emb = self.value_embed(x)
        emb = emb + sinusoidal_positions(x.shape[1], emb.shape[-1], dtype=emb.dtype).to(emb.device)
        rnn_out, _ = self.rnn(emb)
        return torch.cat([rnn_out, emb], dim=-1)


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return h + self.fc2(torch.nn.functional.silu(self.fc1(self.norm(h))))


@dataclass
class LatentState:
    """Sampled latent chain plus its per-variable Gaussian posteriors.

    All tensors have shape (B, n, m): n chain variables of width m.
    ``context`` carries the encoder block activations the decoder's skip
    connections consume.
    """

    z: torch.Tensor
    mean: torch.Tensor
    log_scale: torch.Tensor
    context: list[torch.Tensor]

    @property
    def num_variables(self) -> int:
        return self.z.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.z.shape[2]


@dataclass
class GenerativeOutput:
    """Diagonal Gaussian over the forecast window, (B, l_y, d') each."""

    mean: torch.Tensor
    log_scale: torch.Tensor

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype, device=self.mean.device)
        return self.mean + torch.exp(self.log_scale) * eps


class ForecastVAE(nn.Module):
    """Hierarchical VAE mapping an input window to a forecast Gaussian.

    num_blocks residual blocks on each side; latent chain of num_blocks
    variables, latent_dim wide each (needs >= 2 so factor structure is
    measurable).
    """

    def __init__(
        self,
        num_dims: int,
        target_dims: int,
        input_length: int,
        output_length: int,
        num_blocks: int = 2,
        latent_dim: int = 4,
        embed_dim: int = 64,
        rnn_hidden: int = 128,
        rnn_layers: int = 2,
        block_width: int = 128,
    ):
        super().__init__()
        if num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {num_blocks}")
        if latent_dim < 2:
            raise ValueError(f"latent_dim must be >= 2, got {latent_dim}")
        self.num_dims = num_dims
        self.target_dims = target_dims
        self.input_length = input_length
        self.output_length = output_length
        self.num_blocks = num_blocks
        self.latent_dim = latent_dim

        self.repr = InputRepresentation(num_dims, embed_dim, rnn_hidden, rnn_layers)
        self.enc_in = nn.Linear(self.repr.out_dim, block_width)
        self.enc_blocks = nn.ModuleList(ResidualBlock(block_width) for _ in range(num_blocks))
        self.posterior_heads = nn.ModuleList(
            nn.Linear(block_width + latent_dim, 2 * latent_dim) for _ in range(num_blocks)
        )
        self.z_proj = nn.ModuleList(nn.Linear(latent_dim, block_width) for _ in range(num_blocks))
        self.dec_blocks = nn.ModuleList(ResidualBlock(block_width) for _ in range(num_blocks))
        self.out_head = nn.Linear(block_width, 2 * output_length * target_dims)

    def encode(self, x: torch.Tensor, generator: torch.Generator | None = None) -> LatentState:
        """Sample the latent chain for a batch of input windows (B, l_x, d)."""
        if x.ndim != 3 or x.shape[1] != self.input_length or x.shape[2] != self.num_dims:
            raise ValueError(
                f"expected input of shape (B, {self.input_length}, {self.num_dims}), got {tuple(x.shape)}"
            )
        feats = self.repr(x).mean(dim=1)  # pool over time
        h = self.enc_in(feats)
        context, means, log_scales, zs = [], [], [], []
        z_prev = torch.zeros(x.shape[0], self.latent_dim, dtype=h.dtype, device=h.device)
        for block, head in zip(self.enc_blocks, self.posterior_heads):
            h = block(h)
            context.append(h)
            stats = head(torch.cat([h, z_prev], dim=-1))
            mean, log_scale = stats.chunk(2, dim=-1)
            log_scale = torch.clamp(log_scale, LOG_SCALE_MIN, LOG_SCALE_MAX)
            eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
            z_prev = mean + torch.exp(log_scale) * eps
            means.append(mean)
            log_scales.append(log_scale)
            zs.append(z_prev)
        return LatentState(
            z=torch.stack(zs, dim=1),
            mean=torch.stack(means, dim=1),
            log_scale=torch.stack(log_scales, dim=1),
            context=context,
        )

    def decode(self, latent: LatentState) -> GenerativeOutput:
        """Decode a sampled chain (with its encoder context) into the output Gaussian."""
        h = torch.zeros_like(latent.context[0])
        for i, block in enumerate(self.dec_blocks):
            skip = latent.context[i]  # symmetric block-to-block skip
            h = block(h + skip + self.z_proj[i](latent.z[:, i]))
        stats = self.out_head(h).reshape(-1, self.output_length, self.target_dims, 2)
        mean = stats[..., 0]
        log_scale = torch.clamp(stats[..., 1], LOG_SCALE_MIN, LOG_SCALE_MAX)
        return GenerativeOutput(mean=mean, log_scale=log_scale)

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None):
        latent = self.encode(x, generator=generator)
        return self.decode(latent), latent


# Floor for the diffused-target standard deviation: at steps where the
# target chain is still an identity the reference distribution degenerates
# to a point mass, so its scale is clamped to keep the KL finite.
TARGET_STD_FLOOR = 1e-4


def step_values(chain, t, like: torch.Tensor) -> torch.Tensor:
    """Chain value(s) at 1-indexed step t, broadcastable against ``like``.

    t may be an int (one step for the whole batch) or a long tensor of
    per-sample steps, shape (B,).
    """
    if torch.is_tensor(t):
        vals = torch.as_tensor(chain, dtype=like.dtype, device=like.device)[t.long() - 1]
        return vals.view(-1, *([1] * (like.ndim - 1)))
    return torch.tensor(float(chain[int(t) - 1]), dtype=like.dtype, device=like.device)


def kl_target(
    gen: GenerativeOutput,
    y_clean: torch.Tensor,
    schedule,
    t,
    diffused: bool = True,
    sqrt_noise_coeff: bool = False,
) -> torch.Tensor:
    """KL between the diffused-target distribution and the decoder Gaussian.

    At step t the corrupted target is distributed as
    N(sqrt(abar') * y, (1 - abar')^2 I) per entry (or variance (1 - abar')
    under the square-root noise form), with abar' from the target chain.
    Returns the mean per-entry KL over the batch.  ``diffused=False``
    freezes the chain at abar' = 1 (ablations without target diffusion).
    """
    if diffused:
        abar = step_values(schedule.alpha_bar_prime, t, y_clean)
    else:
        abar = torch.ones((), dtype=y_clean.dtype, device=y_clean.device)
    q_mean = torch.sqrt(abar) * y_clean
    q_std = torch.sqrt(1.0 - abar) if sqrt_noise_coeff else 1.0 - abar
    q_std = torch.clamp(q_std, min=TARGET_STD_FLOOR)

    p_mean, p_log_scale = gen.mean, gen.log_scale
    # KL(q || p) for diagonal Gaussians, per entry.
    kl = (
        p_log_scale
        - torch.log(q_std)
        + (q_std**2 + (q_mean - p_mean) ** 2) * torch.exp(-2.0 * p_log_scale) / 2.0
        - 0.5
    )
    return kl.mean()


def latent_kl(latent: LatentState) -> torch.Tensor:
    """Diagnostic KL of the posterior chain against a standard normal.

    Not part of the training objective; useful for spotting posterior
    collapse.  Mean per-entry KL over the batch.
    """
    var = torch.exp(2.0 * latent.log_scale)
    kl = 0.5 * (latent.mean**2 + var - 2.0 * latent.log_scale - 1.0)
    return kl.mean()
