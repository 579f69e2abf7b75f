import itertools

import numpy as np
import pytest

from diffcast import (
    ForecastResult,
    build_schedule,
    climatology_metrics,
    crps,
    diffusion_inspect,
    evaluate_split,
    forecast,
    generate_d1,
    mae,
    mse,
    sweep_schedule,
    train,
)


# --- metric identities -------------------------------------------------


def brute_force_crps(samples, truth, unbiased=False):
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    s = samples.shape[0]
    term1 = np.abs(samples - truth[None]).mean(axis=0)
    pair = np.zeros_like(truth)
    for a, b in itertools.product(range(s), range(s)):
        pair = pair + np.abs(samples[a] - samples[b])
    denom = s * (s - 1) if unbiased else s * s
    return float(np.mean(term1 - 0.5 * pair / denom))


def test_mse_mae_basics():
    assert mse([1.0, 2.0], [0.0, 4.0]) == pytest.approx(2.5)
    assert mae([1.0, 2.0], [0.0, 4.0]) == pytest.approx(1.5)
    with pytest.raises(ValueError, match="shape mismatch"):
        mse(np.zeros(3), np.zeros(4))


def test_crps_two_sample_oracle():
    # samples {0, 2}, truth 1: E|X-y| = 1, E|X-X'| over 4 pairs = 1 -> 0.5
    assert crps(np.array([[0.0], [2.0]]), np.array([1.0])) == pytest.approx(0.5)


def test_crps_single_sample_is_mae(rng):
    samples = rng.normal(size=(1, 6, 2))
    truth = rng.normal(size=(6, 2))
    assert crps(samples, truth) == pytest.approx(mae(samples[0], truth), abs=1e-14)


def test_crps_matches_brute_force(rng):
    samples = rng.normal(size=(7, 4, 3))
    truth = rng.normal(size=(4, 3))
    assert crps(samples, truth) == pytest.approx(brute_force_crps(samples, truth), abs=1e-12)
    assert crps(samples, truth, unbiased=True) == pytest.approx(
        brute_force_crps(samples, truth, unbiased=True), abs=1e-12
    )


def test_crps_point_mass_on_truth_is_zero(rng):
    truth = rng.normal(size=(5,))
    samples = np.repeat(truth[None], 4, axis=0)
    assert crps(samples, truth) == pytest.approx(0.0, abs=1e-14)


def test_crps_argument_validation():
    with pytest.raises(ValueError, match="incompatible"):
        crps(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ValueError, match="at least two"):
        crps(np.zeros((1, 2)), np.zeros(2), unbiased=True)
    with pytest.raises(ValueError, match="at least one"):
        crps(np.zeros((0, 2)), np.zeros(2))


def test_crps_rewards_sharp_calibrated_ensembles(rng):
    truth = np.zeros(200)
    tight = rng.normal(0.0, 0.1, size=(50, 200))
    wide = rng.normal(0.0, 5.0, size=(50, 200))
    biased = rng.normal(3.0, 0.1, size=(50, 200))
    assert crps(tight, truth) < crps(wide, truth) < crps(biased, truth)


# --- forecasting -------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tiny_config, small_windows):
    checkpoint, _ = train(tiny_config.replace(max_epochs=8), small_windows)
    return checkpoint


def test_forecast_shapes_and_scales(trained, small_series, small_windows):
    window = small_series.values[: trained.config.input_length]
    result = forecast(trained, window, num_samples=5, seed=0)
    assert isinstance(result, ForecastResult)
    l_y, d_out = trained.config.output_length, len(trained.target_dims)
    assert result.samples.shape == (5, l_y, d_out)
    assert result.point.shape == (l_y, d_out)
    assert result.uncertainty.shape == (l_y, d_out)
    # point forecast is the mean of the cleaned samples, on both scales
    np.testing.assert_allclose(result.point_norm, result.samples_norm.mean(axis=0), atol=1e-7)
    np.testing.assert_allclose(result.point, result.samples.mean(axis=0), atol=1e-5)
    # denormalization really maps back to raw units
    stats = small_windows.stats
    np.testing.assert_allclose(
        result.point, stats.denormalize(result.point_norm, trained.target_dims), atol=1e-10
    )


def test_forecast_is_deterministic_and_seed_sensitive(trained, small_series):
    window = small_series.values[:8]
    a = forecast(trained, window, num_samples=4, seed=7)
    b = forecast(trained, window, num_samples=4, seed=7)
    c = forecast(trained, window, num_samples=4, seed=8)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_forecast_ensemble_has_spread(trained, small_series):
    result = forecast(trained, small_series.values[:8], num_samples=8, seed=0)
    assert result.samples.std(axis=0).max() > 0.0


def test_forecast_validates_window_shape(trained):
    with pytest.raises(ValueError, match="does not match"):
        forecast(trained, np.zeros((3, 3)))
    with pytest.raises(ValueError, match="num_samples"):
        forecast(trained, np.zeros((trained.config.input_length, trained.num_dims)), num_samples=0)


def test_clean_mean_forecast_variant(trained, small_series):
    import dataclasses

    alt = dataclasses.replace(trained, config=trained.config.replace(clean_mean_forecast=True))
    window = small_series.values[:8]
    result = forecast(alt, window, num_samples=4, seed=0)
    assert result.point.shape == (8, 1)
    assert np.isfinite(result.point).all()


def test_evaluate_split_keys_and_consistency(trained, small_windows):
    out = evaluate_split(trained, small_windows, "test", num_samples=6, seed=0)
    assert out["split"] == "test"
    assert out["num_windows"] == small_windows.counts()["test"]
    assert out["num_samples"] == 6
    for key in ("mse", "crps", "mse_raw", "crps_raw"):
        assert np.isfinite(out[key]) and out[key] >= 0.0
    # raw-scale errors are larger than normalized ones here (scale > 1)
    repeat = evaluate_split(trained, small_windows, "test", num_samples=6, seed=0)
    assert out["mse"] == repeat["mse"] and out["crps"] == repeat["crps"]


def test_evaluate_split_captures_latents(trained, small_windows):
    out = evaluate_split(trained, small_windows, "val", num_samples=2, capture_latents=True)
    n, m = trained.config.num_blocks, trained.config.latent_dim
    assert out["latents"].shape == (small_windows.counts()["val"], n, m)
    assert out["latent_state"].z.shape == out["latents"].shape


def test_evaluate_split_rejects_empty_split(trained, small_windows, small_series):
    from diffcast import make_windows

    ws = make_windows(small_series, 8, 8, ratios=(7, 0, 3))
    with pytest.raises(ValueError, match="no windows"):
        evaluate_split(trained, ws, "val", num_samples=2)


def test_climatology_crps_equals_mae(small_windows):
    base = climatology_metrics(small_windows, "test")
    train_mean = small_windows.targets["train"].mean(axis=(0, 1))
    pred = np.broadcast_to(train_mean, small_windows.targets["test"].shape)
    assert base["crps"] == pytest.approx(mae(pred, small_windows.targets["test"]), abs=1e-14)
    assert base["mse"] == pytest.approx(mse(pred, small_windows.targets["test"]), abs=1e-14)


def test_trained_model_beats_climatology(trained, small_windows):
    model_metrics = evaluate_split(trained, small_windows, "test", num_samples=16, seed=0)
    base = climatology_metrics(small_windows, "test")
    assert model_metrics["mse"] < base["mse"]


# --- sweeps and inspection ---------------------------------------------


def test_sweep_schedule_covers_grid(tiny_config, small_windows):
    rows = sweep_schedule(
        tiny_config.replace(eval_samples=4),
        small_windows,
        beta_ends=(0.01, 0.1),
        steps_grid=(5,),
        max_epochs=1,
    )
    assert [(r["beta_end"], r["diffusion_steps"]) for r in rows] == [(0.01, 5), (0.1, 5)]
    assert all(r["error"] == "" and np.isfinite(r["mse"]) for r in rows)


def test_sweep_schedule_records_failures_and_continues(tiny_config, small_windows):
    rows = sweep_schedule(
        tiny_config.replace(eval_samples=4),
        small_windows,
        beta_ends=(-0.5, 0.01),  # first cell is an invalid schedule
        steps_grid=(5,),
        max_epochs=1,
    )
    assert rows[0]["error"] != "" and np.isnan(rows[0]["mse"])
    assert rows[1]["error"] == "" and np.isfinite(rows[1]["mse"])


def test_diffusion_inspect_monotone_deviation(small_series):
    schedule = build_schedule(0.0, 0.1, 100)
    records = diffusion_inspect(small_series, schedule, t_list=(0, 10, 50, 100), seed=0)
    assert [r["t"] for r in records] == [0, 10, 50, 100]
    norms = [r["deviation_norm"] for r in records]
    assert norms[0] == 0.0
    assert norms == sorted(norms)
    np.testing.assert_array_equal(records[0]["snapshot"], small_series.values)
    assert records[0]["snapshot"] is not small_series.values  # defensive copy
    for r in records:
        assert r["snapshot"].shape == small_series.values.shape
