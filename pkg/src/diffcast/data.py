"""Synthetic generators, CSV ingestion and sliding-window preparation.

Everything downstream consumes a :class:`RawSeries` (an N x d float matrix
plus a choice of target columns) or a :class:`SeriesWindowSet` (stride-1
input/target windows split chronologically into train/val/test and
z-scored with statistics taken from the training rows only).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

# Default noise level for the bilinear generators: both the latent
# recurrence and the observation model add Gaussian noise with variance
# 0.5 per coordinate.
DEFAULT_NOISE_STD = math.sqrt(0.5)


@dataclass
class RawSeries:
    """A multivariate series: rows are time points, columns are variables."""

    values: np.ndarray  # (N, d) float64
    target_dims: tuple[int, ...]  # columns to forecast; default is the last one
    name: str = "series"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError(f"values must be a non-empty 2-D matrix, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise ValueError(f"non-finite value at row {bad[0]}, column {bad[1]}")
        d = self.values.shape[1]
        dims = tuple(int(i) for i in self.target_dims)
        if len(dims) == 0 or any(not 0 <= i < d for i in dims):
            raise ValueError(f"target_dims {dims} invalid for {d} columns")
        self.target_dims = dims

    @property
    def num_points(self) -> int:
        return self.values.shape[0]

    @property
    def num_dims(self) -> int:
        return self.values.shape[1]


def latent_recurrence(
    a: float,
    b: float,
    num_points: int,
    init: np.ndarray,
    noise_std: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Third-order latent walk driving the synthetic generators.

        w_t = a * w_{t-1} + tanh(b * w_{t-2}) + sin(w_{t-3}) + noise

    ``init`` supplies the first three states, shape (3, dim).  Returns the
    full (num_points, dim) trajectory including the initial states.
    """
    init = np.asarray(init, dtype=np.float64)
    if init.shape[0] != 3 or init.ndim != 2:
        raise ValueError(f"init must hold exactly 3 states, got shape {init.shape}")
    if num_points < 3:
        raise ValueError(f"num_points must be >= 3, got {num_points}")
    dim = init.shape[1]
    w = np.empty((num_points, dim), dtype=np.float64)
    w[:3] = init
    for t in range(3, num_points):
        noise = noise_std * rng.standard_normal(dim) if noise_std > 0 else 0.0
        w[t] = a * w[t - 1] + np.tanh(b * w[t - 2]) + np.sin(w[t - 3]) + noise
    return w


def generate_synthetic(
    a: float,
    b: float,
    k: int,
    num_points: int = 800,
    noise_std: float = DEFAULT_NOISE_STD,
    seed: int | None = 0,
    latent_dim: int = 2,
    latent_noise_std: float | None = None,
    name: str = "synthetic",
) -> RawSeries:
    """Bilinear synthetic series: a latent walk observed through a random map.

    A ``latent_dim``-dimensional recurrence (see :func:`latent_recurrence`,
    initial states uniform on [0, 1]) is projected to ``k`` observed
    dimensions through a fixed matrix with entries uniform on [-1, 1], and
    observation noise of scale ``noise_std`` is added.  The latent
    recurrence uses the same noise scale unless ``latent_noise_std``
    overrides it.  The last observed column is the forecast target.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    init = rng.uniform(0.0, 1.0, size=(3, latent_dim))
    rec_std = noise_std if latent_noise_std is None else latent_noise_std
    w = latent_recurrence(a, b, num_points, init, rec_std, rng)
    mixing = rng.uniform(-1.0, 1.0, size=(latent_dim, k))
    x = w @ mixing
    if noise_std > 0:
        x = x + noise_std * rng.standard_normal(x.shape)
    return RawSeries(values=x, target_dims=(k - 1,), name=name)


def generate_d1(num_points: int = 800, seed: int = 0) -> RawSeries:
    """First benchmark generator: smooth regime (a=0.9, b=0.2, k=20)."""
    return generate_synthetic(0.9, 0.2, 20, num_points, seed=seed, name="d1")


def generate_d2(num_points: int = 800, seed: int = 0) -> RawSeries:
    """Second benchmark generator: rougher regime (a=0.5, b=0.5, k=40)."""
    return generate_synthetic(0.5, 0.5, 40, num_points, seed=seed, name="d2")


def generate_toy(num_points: int = 1600, k: int = 5, seed: int = 0) -> RawSeries:
    """Small overfitting-study generator (a=b=0.5, d=5 observed dims).

    The latent recurrence here uses unit-variance noise while the
    observation noise keeps variance 0.5.
    """
    return generate_synthetic(
        0.5,
        0.5,
        k,
        num_points,
        noise_std=DEFAULT_NOISE_STD,
        latent_noise_std=1.0,
        seed=seed,
        name="toy",
    )


def load_csv(path, target_dims: tuple[int, ...] | None = None) -> RawSeries:
    """Read a numeric CSV (optional single header row) into a RawSeries.

    Every data cell must parse as a finite float; failures are reported
    with their row and column.  ``target_dims`` defaults to the last
    column.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]  # drop blank lines
    if not rows:
        raise ValueError(f"{path}: empty CSV")

    start = 0
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        start = 1  # first row is a header
    if start == len(rows):
        raise ValueError(f"{path}: no data rows below header")

    width = len(rows[start])
    data = np.empty((len(rows) - start, width), dtype=np.float64)
    for i, row in enumerate(rows[start:], start=start):
        if len(row) != width:
            raise ValueError(
                f"{path}: row {i + 1} has {len(row)} cells, expected {width}"
            )
        for j, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: cannot parse {cell!r} at row {i + 1}, column {j + 1}"
                ) from None
            if not math.isfinite(value):
                raise ValueError(
                    f"{path}: non-finite value {cell!r} at row {i + 1}, column {j + 1}"
                )
            data[i - start, j] = value

    if target_dims is None:
        target_dims = (width - 1,)
    return RawSeries(values=data, target_dims=tuple(target_dims), name=str(path))


def save_csv(series: RawSeries, path) -> None:
    """Write a RawSeries in the same CSV dialect load_csv accepts."""
    header = [f"col_{j}" for j in range(series.num_dims)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(series.values.tolist())


def slice_fraction(series: RawSeries, fraction: float) -> RawSeries:
    """Keep the first floor(fraction * N) rows of the series."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    keep = int(math.floor(fraction * series.num_points))
    if keep < 1:
        raise ValueError(
            f"fraction {fraction} of {series.num_points} rows leaves nothing"
        )
    return RawSeries(
        values=series.values[:keep].copy(),
        target_dims=series.target_dims,
        name=series.name,
    )


@dataclass
class NormStats:
    """Per-column z-score statistics taken from the training rows."""

    mean: np.ndarray  # (d,)
    scale: np.ndarray  # (d,), std floored away from zero

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.scale

    def denormalize(self, values: np.ndarray, dims: tuple[int, ...] | None = None) -> np.ndarray:
        if dims is None:
            return values * self.scale + self.mean
        return values * self.scale[list(dims)] + self.mean[list(dims)]

    def denormalize_delta(self, values: np.ndarray, dims: tuple[int, ...] | None = None) -> np.ndarray:
        """Rescale a difference-like quantity (no mean shift)."""
        if dims is None:
            return values * self.scale
        return values * self.scale[list(dims)]

    @staticmethod
    def identity(num_dims: int) -> "NormStats":
        return NormStats(mean=np.zeros(num_dims), scale=np.ones(num_dims))

    @staticmethod
    def from_rows(rows: np.ndarray) -> "NormStats":
        scale = rows.std(axis=0)
        scale = np.where(scale < 1e-8, 1.0, scale)
        return NormStats(mean=rows.mean(axis=0), scale=scale)


@dataclass
class SeriesWindowSet:
    """Stride-1 windows over chronological train/val/test segments.

    ``inputs[split]`` has shape (count, input_length, d) and
    ``targets[split]`` shape (count, output_length, d'), both on the
    normalized scale when normalization is on.  Splitting happens before
    windowing, so no window straddles a split boundary.
    """

    inputs: dict[str, np.ndarray]
    targets: dict[str, np.ndarray]
    stats: NormStats
    target_dims: tuple[int, ...]
    input_length: int
    output_length: int
    boundaries: tuple[int, int]  # row indices where val and test begin
    name: str = "series"
    normalized: bool = True

    def counts(self) -> dict[str, int]:
        return {split: arr.shape[0] for split, arr in self.inputs.items()}

    @property
    def num_dims(self) -> int:
        return self.inputs["train"].shape[2]

    def summary(self) -> dict:
        """JSON-friendly audit record of the windowing."""
        return {
            "name": self.name,
            "input_length": self.input_length,
            "output_length": self.output_length,
            "target_dims": list(self.target_dims),
            "boundaries": list(self.boundaries),
            "counts": self.counts(),
            "normalized": self.normalized,
            "norm_mean": self.stats.mean.tolist(),
            "norm_scale": self.stats.scale.tolist(),
        }


def make_windows(
    series: RawSeries,
    input_length: int,
    output_length: int,
    ratios: tuple[int, int, int] = (7, 1, 2),
    normalize: bool = True,
) -> SeriesWindowSet:
    """Split chronologically by ``ratios`` and enumerate stride-1 windows.

    Segment sizes are floor(N * r / sum(ratios)) for train and val, with
    the remainder going to test.  A window is input_length rows of all
    columns followed immediately by output_length rows of the target
    columns.  The train segment must fit at least one window; a val or
    test segment shorter than one window simply comes back empty.
    """
    if input_length < 1 or output_length < 1:
        raise ValueError(
            f"window lengths must be >= 1, got ({input_length}, {output_length})"
        )
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"ratios must be 3 non-negative values, got {ratios}")

    n = series.num_points
    total = sum(ratios)
    n_train = math.floor(n * ratios[0] / total)
    n_val = math.floor(n * ratios[1] / total)
    boundaries = (n_train, n_train + n_val)
    segments = {
        "train": series.values[: boundaries[0]],
        "val": series.values[boundaries[0] : boundaries[1]],
        "test": series.values[boundaries[1] :],
    }

    window = input_length + output_length
    if segments["train"].shape[0] < window:
        raise ValueError(
            f"train segment has {segments['train'].shape[0]} rows, "
            f"too short for one {window}-row window"
        )

    stats = NormStats.from_rows(segments["train"]) if normalize else NormStats.identity(series.num_dims)

    inputs: dict[str, np.ndarray] = {}
    targets: dict[str, np.ndarray] = {}
    tdims = list(series.target_dims)
    for split, rows in segments.items():
        rows = stats.normalize(rows)
        count = max(rows.shape[0] - window + 1, 0)
        xs = np.empty((count, input_length, series.num_dims))
        ys = np.empty((count, output_length, len(tdims)))
        for i in range(count):
            xs[i] = rows[i : i + input_length]
            ys[i] = rows[i + input_length : i + window][:, tdims]
        inputs[split] = xs
        targets[split] = ys

    return SeriesWindowSet(
        inputs=inputs,
        targets=targets,
        stats=stats,
        target_dims=series.target_dims,
        input_length=input_length,
        output_length=output_length,
        boundaries=boundaries,
        name=series.name,
        normalized=normalize,
    )
