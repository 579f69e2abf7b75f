"""Coupled noise schedules for diffusion-based data augmentation.

A linear variance schedule ``beta`` drives two cumulative-product chains:
the input chain ``alpha_bar`` and a slower target chain ``alpha_bar_prime``
obtained by shrinking every beta with a factor ``omega`` in (0, 1).  Both
chains live on a shared step axis t = 1..T, so an input window and its
forecast target can be corrupted in lockstep while the target keeps more
of its signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Precomputed schedule arrays, all of length ``num_steps``.

    Index i holds the value for step t = i + 1; use the ``*_at`` helpers
    to look values up by 1-indexed step.
    """

    beta: np.ndarray  # per-step variances, linear between beta_start and beta_end
    alpha_bar: np.ndarray  # cumprod(1 - beta), input chain
    alpha_bar_prime: np.ndarray  # cumprod(1 - omega * beta), target chain
    sigma: np.ndarray  # 1 - alpha_bar, the scale weighting denoising losses
    omega: float = field(default=0.1)

    @property
    def num_steps(self) -> int:
        return len(self.beta)

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.num_steps:
            raise ValueError(
                f"step t={t} outside valid range [1, {self.num_steps}]"
            )

    def alpha_bar_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha_bar[t - 1])

    def alpha_bar_prime_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha_bar_prime[t - 1])

    def sigma_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.sigma[t - 1])


def build_schedule(
    beta_start: float,
    beta_end: float,
    num_steps: int,
    omega: float = 0.1,
) -> DiffusionSchedule:
    """Build the coupled schedule from a linear beta range.

    Requires 0 <= beta_start <= beta_end < 1, num_steps >= 1 and
    0 < omega < 1.  beta_start == 0 is legal; the first step is then an
    identity (alpha_bar stays 1 and sigma stays 0 until a positive beta
    appears).
    """
    if not 0.0 <= beta_start <= beta_end < 1.0:
        raise ValueError(
            f"need 0 <= beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if not 0.0 < omega < 1.0:
        raise ValueError(f"omega must lie strictly inside (0, 1), got {omega}")

    beta = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    alpha_bar_prime = np.cumprod(1.0 - omega * beta)
    sigma = 1.0 - alpha_bar
    return DiffusionSchedule(
        beta=beta,
        alpha_bar=alpha_bar,
        alpha_bar_prime=alpha_bar_prime,
        sigma=sigma,
        omega=float(omega),
    )


def diffuse(series, t: int, chain: np.ndarray, noise, sqrt_noise_coeff: bool = False):
    """Corrupt ``series`` to step ``t`` of ``chain`` using the given noise.

    The default form scales the noise by ``(1 - alpha_bar_t)``:

        out = sqrt(alpha_bar_t) * series + (1 - alpha_bar_t) * noise

    With ``sqrt_noise_coeff=True`` the noise coefficient becomes
    ``sqrt(1 - alpha_bar_t)``, the more common variance-preserving form;
    it is kept behind a flag for comparison runs.

    ``series`` and ``noise`` must share a shape and may be numpy arrays or
    torch tensors; the chain itself is a numpy vector and only scalar
    coefficients touch the data, so either array type passes through.
    """
    if not 1 <= t <= len(chain):
        raise ValueError(f"step t={t} outside valid range [1, {len(chain)}]")
    if getattr(series, "shape", None) != getattr(noise, "shape", None):
        raise ValueError(
            f"series shape {getattr(series, 'shape', None)} != noise shape "
            f"{getattr(noise, 'shape', None)}"
        )
    a = float(chain[t - 1])
    noise_coeff = math.sqrt(1.0 - a) if sqrt_noise_coeff else 1.0 - a
    return math.sqrt(a) * series + noise_coeff * noise


def coupled_diffuse(
    x: np.ndarray,
    y: np.ndarray,
    t: int,
    schedule: DiffusionSchedule,
    rng: np.random.Generator | int | None = None,
    sqrt_noise_coeff: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Diffuse an input window and its target to the same step.

    The input follows ``alpha_bar`` and the target the slower
    ``alpha_bar_prime``; the two noise draws are independent.  Pass an
    ``rng`` (generator or seed) for reproducibility.
    """
    if isinstance(rng, np.random.Generator):
        gen = rng
    else:
        gen = np.random.default_rng(rng)
    noise_x = gen.standard_normal(x.shape)
    noise_y = gen.standard_normal(y.shape)
    x_t = diffuse(x, t, schedule.alpha_bar, noise_x, sqrt_noise_coeff)
    y_t = diffuse(y, t, schedule.alpha_bar_prime, noise_y, sqrt_noise_coeff)
    return x_t, y_t
