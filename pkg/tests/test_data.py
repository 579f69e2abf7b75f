import math

import numpy as np
import pytest

from diffcast import (
    RawSeries,
    generate_d1,
    generate_d2,
    generate_synthetic,
    generate_toy,
    load_csv,
    make_windows,
    slice_fraction,
)
from diffcast.data import latent_recurrence, save_csv


def test_recurrence_single_step_oracle():
    # one deterministic step from all-ones states:
    #   w4 = a*w3 + tanh(b*w2) + sin(w1) = 0.5 + tanh(0.5) + sin(1)
    rng = np.random.default_rng(0)
    init = np.ones((3, 2))
    w = latent_recurrence(0.5, 0.5, 4, init, noise_std=0.0, rng=rng)
    expected = 0.5 * 1.0 + math.tanh(0.5) + math.sin(1.0)
    np.testing.assert_allclose(w[3], [expected, expected], rtol=1e-12)
    assert expected == pytest.approx(1.8035881420679063)


def test_recurrence_matches_reference_implementation():
    # independent three-lag reference, noise off
    a, b = 0.9, 0.2
    rng = np.random.default_rng(5)
    init = rng.uniform(0, 1, size=(3, 2))
    w = latent_recurrence(a, b, 50, init, noise_std=0.0, rng=rng)

    ref = [init[0], init[1], init[2]]
    for _ in range(3, 50):
        ref.append(a * ref[-1] + np.tanh(b * ref[-2]) + np.sin(ref[-3]))
    np.testing.assert_allclose(w, np.array(ref), rtol=1e-12)


def test_generate_synthetic_shapes_and_target():
    series = generate_synthetic(0.9, 0.2, k=20, num_points=100, seed=0)
    assert series.values.shape == (100, 20)
    assert series.target_dims == (19,)
    assert np.isfinite(series.values).all()


def test_generators_are_seeded():
    a = generate_d1(120, seed=4).values
    b = generate_d1(120, seed=4).values
    c = generate_d1(120, seed=5).values
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert generate_d2(50, seed=0).values.shape == (50, 40)
    assert generate_toy(50, seed=0).values.shape == (50, 5)


def test_raw_series_validation():
    with pytest.raises(ValueError, match="non-finite"):
        RawSeries(values=np.array([[1.0, np.nan]]), target_dims=(0,))
    with pytest.raises(ValueError, match="target_dims"):
        RawSeries(values=np.ones((5, 2)), target_dims=(2,))


def test_csv_round_trip(tmp_path):
    series = generate_toy(40, seed=1)
    path = tmp_path / "toy.csv"
    save_csv(series, path)
    loaded = load_csv(path)
    np.testing.assert_allclose(loaded.values, series.values, rtol=1e-15)
    assert loaded.target_dims == (4,)


def test_csv_headerless(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("1.0,2.0\n3.0,4.0\n")
    loaded = load_csv(path, target_dims=(0,))
    np.testing.assert_array_equal(loaded.values, [[1.0, 2.0], [3.0, 4.0]])
    assert loaded.target_dims == (0,)


def test_csv_error_reporting(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError, match="empty"):
        load_csv(empty)

    nan_cell = tmp_path / "nan.csv"
    nan_cell.write_text("a,b\n1.0,2.0\n3.0,NaN\n")
    with pytest.raises(ValueError, match=r"row 3, column 2"):
        load_csv(nan_cell)

    junk = tmp_path / "junk.csv"
    junk.write_text("1.0,2.0\n1.0,oops\n")
    with pytest.raises(ValueError, match=r"row 2, column 2"):
        load_csv(junk)

    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1.0,2.0\n1.0\n")
    with pytest.raises(ValueError, match=r"row 2"):
        load_csv(ragged)


def test_slice_fraction_floors():
    series = RawSeries(values=np.arange(20.0).reshape(10, 2), target_dims=(1,))
    half = slice_fraction(series, 0.55)  # floor(5.5) = 5 rows
    assert half.num_points == 5
    np.testing.assert_array_equal(half.values, series.values[:5])
    with pytest.raises(ValueError):
        slice_fraction(series, 0.0)
    with pytest.raises(ValueError):
        slice_fraction(series, 1.5)
    assert slice_fraction(series, 1.0).num_points == 10


def test_window_counts_and_boundaries():
    # 20 rows at 7:1:2 split at rows 14 and 16; train fits 11 windows of 2+2
    series = RawSeries(values=np.arange(40.0).reshape(20, 2), target_dims=(1,))
    ws = make_windows(series, 2, 2, ratios=(7, 1, 2), normalize=False)
    assert ws.boundaries == (14, 16)
    assert ws.counts() == {"train": 11, "val": 0, "test": 1}


def test_windows_never_cross_split_boundaries():
    series = RawSeries(values=np.arange(60.0).reshape(30, 2), target_dims=(0,))
    ws = make_windows(series, 2, 2, ratios=(7, 1, 2), normalize=False)
    # with 30 rows: train rows [0, 21), val [21, 24), test [24, 30)
    assert ws.boundaries == (21, 24)
    # last train window must end at row 20, i.e. values < 42
    last_train = ws.targets["train"][-1]
    assert last_train.max() < 42.0
    # first test window starts at row 24 -> first input value is 48
    assert ws.inputs["test"][0][0, 0] == 48.0


def test_window_contiguity():
    series = RawSeries(values=np.arange(80.0).reshape(40, 2), target_dims=(0, 1))
    ws = make_windows(series, 3, 2, ratios=(7, 1, 2), normalize=False)
    x0, y0 = ws.inputs["train"][0], ws.targets["train"][0]
    # target rows continue exactly where input rows stop
    np.testing.assert_array_equal(x0, series.values[0:3])
    np.testing.assert_array_equal(y0, series.values[3:5])


def test_normalization_uses_train_stats_only():
    rng = np.random.default_rng(0)
    values = rng.normal(loc=3.0, scale=2.0, size=(100, 3))
    values[70:] += 50.0  # shift val/test so pooled stats would differ
    series = RawSeries(values=values, target_dims=(2,))
    ws = make_windows(series, 4, 4, ratios=(7, 1, 2))
    train_rows = values[:70]
    np.testing.assert_allclose(ws.stats.mean, train_rows.mean(axis=0))
    np.testing.assert_allclose(ws.stats.scale, train_rows.std(axis=0))
    # train windows are centered under their own stats
    flat = ws.inputs["train"].reshape(-1, 3)
    assert abs(flat.mean()) < 0.2
    # round trip back to raw units
    restored = ws.stats.denormalize(ws.inputs["train"][0])
    np.testing.assert_allclose(restored, values[:4], rtol=1e-12)


def test_segment_too_short_raises():
    series = RawSeries(values=np.ones((20, 2)), target_dims=(1,))
    with pytest.raises(ValueError, match="too short"):
        make_windows(series, 8, 8, ratios=(7, 1, 2))


def test_zero_ratio_split_allows_empty_segment():
    series = RawSeries(values=np.arange(80.0).reshape(40, 2), target_dims=(1,))
    ws = make_windows(series, 4, 4, ratios=(7, 0, 3), normalize=False)
    assert ws.counts()["val"] == 0
    assert ws.counts()["train"] > 0 and ws.counts()["test"] > 0


def test_window_summary_is_json_friendly():
    import json

    series = generate_d1(200, seed=0)
    ws = make_windows(series, 8, 8)
    text = json.dumps(ws.summary())
    back = json.loads(text)
    assert back["counts"] == ws.counts()
    assert back["boundaries"] == [140, 160]
