"""Release gate: nine end-to-end checks over the statistical contracts.

Each test prints a single ``criterion N: PASS/FAIL`` verdict line; run

    pytest tests/test_acceptance.py -v -s

to see all nine lines.  The heavy checks (4, 5, 6) train real models and
together take a few minutes on a laptop CPU; every timed criterion
asserts its own wall-clock budget.
"""

import time

import numpy as np
import pytest
import torch

from diffcast import (
    ExperimentConfig,
    build_schedule,
    climatology_metrics,
    crps,
    denoise_jump,
    dsm_loss,
    evaluate_split,
    mae,
    mig,
    prepare_windows,
    preset,
    tc_loss,
    train,
)
from diffcast import diffuse
from diffcast.denoise import EnergyNet, input_gradient
from diffcast.disentangle import FactorBatch
from diffcast.model import GenerativeOutput
from diffcast.train import ablation_suite


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"criterion {num}: {detail}"


def _small_config(**overrides) -> ExperimentConfig:
    base = dict(
        dataset="d1",
        num_points=300,
        max_epochs=3,
        diffusion_steps=20,
        eval_samples=8,
        rnn_hidden=32,
        embed_dim=16,
        block_width=32,
        energy_hidden=32,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_criterion_1_diffusion_marginals():
    start = time.perf_counter()
    schedule = build_schedule(0.0, 0.1, 100, omega=0.1)
    rng = np.random.default_rng(7)
    series = rng.standard_normal((4, 3))
    draws = 20_000

    worst_mean_z, worst_std_rel = 0.0, 0.0
    for t in (10, 50, 100):
        a = schedule.alpha_bar_at(t)
        noise = rng.standard_normal((draws,) + series.shape)
        diffused = diffuse(np.broadcast_to(series, noise.shape), t, schedule.alpha_bar, noise)
        target_mean = np.sqrt(a) * series
        noise_std = 1.0 - a
        se = noise_std / np.sqrt(draws)
        mean_z = float(np.abs(diffused.mean(axis=0) - target_mean).max() / se)
        std_rel = float(abs((diffused - target_mean).std() - noise_std) / noise_std)
        worst_mean_z = max(worst_mean_z, mean_z)
        worst_std_rel = max(worst_std_rel, std_rel)
    elapsed = time.perf_counter() - start

    ok = worst_mean_z <= 3.0 and worst_std_rel <= 0.05 and elapsed < 10.0
    _verdict(
        1,
        ok,
        f"marginals at t in {{10,50,100}}: worst mean offset {worst_mean_z:.2f} SE "
        f"(cap 3), worst std error {worst_std_rel:.2%} (cap 5%), {elapsed:.1f}s (cap 10s)",
    )


def test_criterion_2_gradient_oracles():
    start = time.perf_counter()
    torch.manual_seed(0)

    # energy input gradient vs central finite differences, in float64
    net = EnergyNet(output_length=4, target_dims=2, hidden=16).double()
    y = torch.randn(2, 4, 2, dtype=torch.float64)
    grad = input_gradient(net, y, t=2)
    h = 1e-5
    fd = torch.zeros_like(y)
    for idx in np.ndindex(*y.shape):
        plus, minus = y.clone(), y.clone()
        plus[idx] += h
        minus[idx] -= h
        with torch.no_grad():
            fd[idx] = (net(plus, 2).sum() - net(minus, 2).sum()) / (2 * h)
    dsm_rel = float(torch.linalg.vector_norm(grad - fd) / torch.linalg.vector_norm(fd))

    # reparameterized sample gradient w.r.t. posterior mean and log-scale
    mean = torch.zeros(3, 4, 2, dtype=torch.float64, requires_grad=True)
    log_scale = torch.full((3, 4, 2), -0.5, dtype=torch.float64, requires_grad=True)
    eps = lambda: torch.Generator().manual_seed(99)  # noqa: E731
    loss = (GenerativeOutput(mean, log_scale).sample(eps()) ** 3).sum()
    loss.backward()
    reparam_rel = 0.0
    for tensor, grad_t in ((mean, mean.grad), (log_scale, log_scale.grad)):
        analytic, numeric = [], []
        for idx in [(0, 0, 0), (1, 2, 1), (2, 3, 0), (0, 1, 1)]:
            plus = tensor.detach().clone()
            minus = tensor.detach().clone()
            plus[idx] += h
            minus[idx] -= h
            with torch.no_grad():
                if tensor is mean:
                    f_p = (GenerativeOutput(plus, log_scale).sample(eps()) ** 3).sum()
                    f_m = (GenerativeOutput(minus, log_scale).sample(eps()) ** 3).sum()
                else:
                    f_p = (GenerativeOutput(mean, plus).sample(eps()) ** 3).sum()
                    f_m = (GenerativeOutput(mean, minus).sample(eps()) ** 3).sum()
            analytic.append(float(grad_t[idx]))
            numeric.append(float((f_p - f_m) / (2 * h)))
        analytic, numeric = np.array(analytic), np.array(numeric)
        reparam_rel = max(
            reparam_rel,
            float(np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)),
        )
    elapsed = time.perf_counter() - start

    ok = dsm_rel <= 1e-4 and reparam_rel <= 1e-4 and elapsed < 30.0
    _verdict(
        2,
        ok,
        f"finite-difference agreement: energy input gradient {dsm_rel:.2e}, "
        f"reparameterization {reparam_rel:.2e} (cap 1e-4), {elapsed:.1f}s (cap 30s)",
    )


def _brute_force_crps(samples: np.ndarray, truth: np.ndarray) -> float:
    s = samples.shape[0]
    term1 = np.abs(samples - truth[None]).mean()
    pair = 0.0
    for a in range(s):
        for b in range(s):
            pair += np.abs(samples[a] - samples[b]).mean()
    return float(term1 - pair / (2 * s * s))


def test_criterion_3_crps_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        s = int(rng.integers(2, 13))
        n = int(rng.integers(1, 9))
        samples = rng.standard_normal((s, n))
        truth = rng.standard_normal(n)
        worst = max(worst, abs(crps(samples, truth) - _brute_force_crps(samples, truth)))

    single = rng.standard_normal((1, 6))
    truth = rng.standard_normal(6)
    exact = crps(single, truth) == mae(single[0], truth)

    ok = worst <= 1e-12 and exact
    _verdict(
        3,
        ok,
        f"vectorized vs brute force: max abs diff {worst:.2e} over 100 draws "
        f"(cap 1e-12); one-sample CRPS equals MAE: {exact}",
    )


def test_criterion_4_d1_reproduction():
    start = time.perf_counter()
    full_mse, full_crps, ablated_mse = [], [], []
    for seed in range(5):
        cfg = preset("d1", seed=seed)
        _, windows = prepare_windows(cfg)
        ckpt, _ = train(cfg, windows)
        metrics = evaluate_split(ckpt, windows, "test")
        full_mse.append(metrics["mse"])
        full_crps.append(metrics["crps"])

        bare = cfg.replace(diffuse_input=False, diffuse_target=False, use_dsm=False)
        ckpt, _ = train(bare, windows)
        ablated_mse.append(evaluate_split(ckpt, windows, "test")["mse"])
    elapsed = time.perf_counter() - start

    mse_mean = float(np.mean(full_mse))
    crps_mean = float(np.mean(full_crps))
    wins = sum(f < a for f, a in zip(full_mse, ablated_mse))
    ok = mse_mean <= 0.70 and crps_mean <= 0.75 and wins >= 3 and elapsed <= 1200.0
    _verdict(
        4,
        ok,
        f"5-seed full model: MSE {mse_mean:.4f} (cap 0.70), CRPS {crps_mean:.4f} "
        f"(cap 0.75); beats the no-diffusion/no-score ablation on {wins}/5 seeds "
        f"(need 3); {elapsed:.0f}s (cap 1200s)",
    )


def test_criterion_5_d2_beats_climatology():
    improvements = []
    for seed in range(5):
        cfg = preset("d2", seed=seed)
        _, windows = prepare_windows(cfg)
        ckpt, _ = train(cfg, windows)
        model_crps = evaluate_split(ckpt, windows, "test")["crps"]
        base_crps = climatology_metrics(windows)["crps"]
        improvements.append(1.0 - model_crps / base_crps)

    wins = sum(gain >= 0.10 for gain in improvements)
    ok = wins >= 3
    _verdict(
        5,
        ok,
        f"trained CRPS beats the training-mean forecast by >=10% on {wins}/5 seeds "
        f"(need 3); gains: {', '.join(f'{g:.0%}' for g in improvements)}",
    )


def test_criterion_6_denoising_efficacy():
    start = time.perf_counter()
    cfg = preset("d1", seed=0)
    _, windows = prepare_windows(cfg)
    schedule = build_schedule(cfg.beta_start, cfg.beta_end, cfg.diffusion_steps, cfg.omega)
    clean = torch.from_numpy(windows.targets["train"]).float()
    t_max = schedule.num_steps

    torch.manual_seed(0)
    net = EnergyNet(
        output_length=cfg.output_length, target_dims=clean.shape[-1], hidden=512
    )
    opt = torch.optim.Adam(net.parameters(), lr=2e-3)
    anneal = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=8000)
    gen = torch.Generator().manual_seed(0)
    for _ in range(8000):
        idx = torch.randint(0, clean.shape[0], (128,), generator=gen)
        batch = clean[idx]
        noisy = (batch + 0.1 * torch.randn(batch.shape, generator=gen)).requires_grad_(True)
        loss = dsm_loss(net, batch, noisy, schedule, t_max)
        opt.zero_grad()
        loss.backward()
        opt.step()
        anneal.step()

    improved = 0
    rng = np.random.default_rng(1)
    for trial in range(100):
        y = clean[trial % clean.shape[0]].unsqueeze(0)
        corrupt = y + 0.1 * torch.from_numpy(rng.standard_normal(y.shape)).float()
        jumped, _ = denoise_jump(net, corrupt, t=t_max)
        improved += float(torch.linalg.vector_norm(jumped - y)) < float(
            torch.linalg.vector_norm(corrupt - y)
        )
    elapsed = time.perf_counter() - start

    ok = improved >= 90 and elapsed < 300.0
    _verdict(
        6,
        ok,
        f"one-step jump moved the corrupted window closer to truth in {improved}/100 "
        f"trials (need 90); {elapsed:.0f}s (cap 300s)",
    )


def _balanced_factors(rng, n_samples, num_factors, cardinality=10):
    base = np.repeat(np.arange(cardinality), n_samples // cardinality)
    return np.stack([rng.permutation(base) for _ in range(num_factors)], axis=1)


def test_criterion_7_disentanglement_metrics():
    rng = np.random.default_rng(0)
    n = 10_000
    factors = _balanced_factors(rng, n, num_factors=4)
    latents = factors + rng.uniform(0, 0.1, size=factors.shape)
    oracle = mig(latents, factors)
    null = mig(latents[rng.permutation(n)], factors)

    gen = torch.Generator().manual_seed(0)
    z = torch.randn(256, 2, 4, generator=gen)
    batch = FactorBatch(z=z, mean=torch.zeros(256, 2, 4), log_scale=torch.zeros(256, 2, 4))
    tc = float(tc_loss(batch))

    ok = oracle >= 0.9 and null <= 0.05 and abs(tc) < 0.05
    _verdict(
        7,
        ok,
        f"MIG {oracle:.3f} on the bijective oracle (floor 0.9), {null:.3f} on the "
        f"permutation null (cap 0.05); TC {tc:.2e} on factorized standard normals "
        f"at batch 256 (cap 0.05)",
    )


def test_criterion_8_bit_identical_reruns():
    cfg = _small_config(seed=11)
    _, windows = prepare_windows(cfg)
    first_ckpt, first_history = train(cfg, windows)
    second_ckpt, second_history = train(cfg, windows)

    states_equal = all(
        torch.equal(first_ckpt.model_state[k], second_ckpt.model_state[k])
        for k in first_ckpt.model_state
    ) and all(
        torch.equal(first_ckpt.energy_state[k], second_ckpt.energy_state[k])
        for k in first_ckpt.energy_state
    )
    history_equal = first_history == second_history
    best_equal = first_ckpt.best_val_mse == second_ckpt.best_val_mse

    ok = states_equal and history_equal and best_equal
    _verdict(
        8,
        ok,
        f"same config+seed reruns: parameters bit-identical {states_equal}, "
        f"metric histories identical {history_equal}, best val MSE identical {best_equal}",
    )


def test_criterion_9_ablation_suite_and_pure_mse():
    cfg = _small_config(max_epochs=2)
    _, windows = prepare_windows(cfg)
    rows = ablation_suite(cfg, windows, seeds=(0,))
    clean_rows = sum(1 for row in rows if row["error"] == "")

    bare = cfg.replace(
        kl_weight=0.0,
        dsm_weight=0.0,
        tc_weight=0.0,
        diffuse_input=False,
        diffuse_target=False,
        use_dsm=False,
    )
    _, history = train(bare, windows)
    final_loss = history[-1]["loss"]

    ok = clean_rows == 6 and np.isfinite(final_loss)
    _verdict(
        9,
        ok,
        f"{clean_rows}/6 ablation variants ran clean; pure-MSE degenerate mode "
        f"final loss {final_loss:.4f} (finite)",
    )


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
