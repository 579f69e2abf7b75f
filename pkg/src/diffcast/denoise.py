"""Energy-based cleanup of generated forecast windows.

A small fully-connected energy model E(y, t) is trained with denoising
score matching so that sigma0^2 * grad_y E(y, t) points from a corrupted
window back toward its clean counterpart.  A single gradient step then
both denoises a generated forecast and yields an uncertainty estimate
(the move itself).
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .model import sinusoidal_positions, step_values

# Iterates beyond this norm abort multistep refinement: the energy
# landscape is diverging rather than denoising.
DIVERGENCE_NORM = 1e6


class EnergyNet(nn.Module):
    """Three hidden fully-connected layers with smooth activations.

    Smoothness matters: the DSM objective differentiates through the
    input gradient of E, so the activations must be twice differentiable
    (SiLU here).  When ``condition_on_step`` is set the diffusion step t
    enters through a sinusoidal embedding; t=0 denotes the uncorrupted
    regime used at forecast time.
    """

    def __init__(
        self,
        output_length: int,
        target_dims: int,
        hidden: int = 128,
        sigma0: float = 0.1,
        condition_on_step: bool = True,
        step_embed_dim: int = 32,
        max_steps: int = 10000,
    ):
        super().__init__()
        if sigma0 <= 0:
            raise ValueError(f"sigma0 must be positive, got {sigma0}")
        self.sigma0 = float(sigma0)
        self.condition_on_step = condition_on_step
        self.step_embed_dim = step_embed_dim
        in_dim = output_length * target_dims + (step_embed_dim if condition_on_step else 0)
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
            nn.SiLU(),
            nn.Linear(hidden, 1),
        )
        if condition_on_step:
            table = sinusoidal_positions(max_steps + 1, step_embed_dim)
            self.register_buffer("step_table", table)

    def forward(self, y: torch.Tensor, t: torch.Tensor | int | None = None) -> torch.Tensor:
        """Energy per window; y is (B, l_y, d') or already flattened."""
        flat = y.reshape(y.shape[0], -1)
        if self.condition_on_step:
            if t is None:
                t = 0
            if not torch.is_tensor(t):
                t = torch.full((flat.shape[0],), int(t), dtype=torch.long, device=flat.device)
            emb = self.step_table.to(flat.dtype)[t]
            flat = torch.cat([flat, emb], dim=-1)
        return self.net(flat).squeeze(-1)


def input_gradient(energy, y: torch.Tensor, t=None, create_graph: bool = False) -> torch.Tensor:
    """grad_y E(y, t), computed with autograd on a (possibly detached) copy."""
    with torch.enable_grad():
        y_in = y if (y.requires_grad and create_graph) else y.detach().requires_grad_(True)
        e = energy(y_in, t)
        (grad,) = torch.autograd.grad(e.sum(), y_in, create_graph=create_graph)
    return grad


def dsm_loss(energy, y_true: torch.Tensor, y_generated_t: torch.Tensor, schedule, t) -> torch.Tensor:
    """Scaled denoising score-matching objective at step t.

        sigma_t * mean( (y_true - y_gen + sigma0^2 * grad E(y_gen, t))^2 )

    ``y_generated_t`` must be on the autograd tape (it is what the
    gradient is taken with respect to, and the outer loss differentiates
    through that gradient).  sigma_t = 1 - alpha_bar_t weighs the step:
    at untouched steps (sigma_t = 0) the loss vanishes identically.
    t may be per-batch (int) or per-sample (long tensor).
    """
    if not y_generated_t.requires_grad:
        raise ValueError("y_generated_t must require grad for score matching")
    sigma_t = step_values(schedule.sigma, t, y_generated_t)
    grad = input_gradient(energy, y_generated_t, t, create_graph=True)
    residual = y_true - y_generated_t + energy.sigma0**2 * grad
    return (sigma_t * residual.pow(2)).mean()


def denoise_jump(energy, y: torch.Tensor, t=None) -> tuple[torch.Tensor, torch.Tensor]:
    """One-shot cleanup: move y against the energy gradient.

    Returns ``(y - sigma0^2 * grad E, sigma0^2 * grad E)``; the second
    term is the signed uncertainty estimate (its magnitude is what
    envelope plots show).  No parameters are updated.
    """
    grad = input_gradient(energy, y, t, create_graph=False)
    move = energy.sigma0**2 * grad
    return (y - move).detach(), move.detach()


def multistep_denoise(
    energy,
    y: torch.Tensor,
    num_steps: int = 1,
    step_size: float | None = None,
    langevin: bool = False,
    seed: int | None = None,
    t=None,
) -> list[torch.Tensor]:
    """Iterated refinement, optionally with Langevin noise injection.

        y_k = y_{k-1} - (step_size / 2) * grad E(y_{k-1}) + sqrt(step_size) * eps

    where eps is standard normal only when ``langevin`` is on.  The
    default step size 2 * sigma0^2 makes a single noiseless step coincide
    with :func:`denoise_jump`.  Returns the list of ``num_steps`` iterates;
    raises if an iterate's norm exceeds the divergence guard.
    """
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if step_size is None:
        step_size = 2.0 * energy.sigma0**2
    if step_size <= 0:
        raise ValueError(f"step_size must be positive, got {step_size}")
    generator = None
    if langevin:
        generator = torch.Generator()
        if seed is not None:
            generator.manual_seed(int(seed))
    trajectory: list[torch.Tensor] = []
    current = y
    for _ in range(num_steps):
        grad = input_gradient(energy, current, t, create_graph=False)
        current = current - 0.5 * step_size * grad
        if langevin:
            noise = torch.randn(current.shape, generator=generator, dtype=current.dtype, device=current.device)
            current = current + step_size**0.5 * noise
        current = current.detach()
        norm = float(current.norm())
        if not norm < DIVERGENCE_NORM:
            raise RuntimeError(
                f"refinement diverged: iterate norm {norm:.3e} exceeds {DIVERGENCE_NORM:.0e}"
            )
        trajectory.append(current)
    return trajectory
