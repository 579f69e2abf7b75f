import numpy as np
import pytest

from diffcast import ExperimentConfig, generate_d1, make_windows


@pytest.fixture(scope="session")
def small_series():
    return generate_d1(300, seed=0)


@pytest.fixture(scope="session")
def small_windows(small_series):
    return make_windows(small_series, 8, 8)


@pytest.fixture(scope="session")
def tiny_config():
    """Config small enough for second-scale training in unit tests."""
    return ExperimentConfig(
        dataset="d1",
        num_points=300,
        max_epochs=2,
        diffusion_steps=20,
        eval_samples=8,
        rnn_hidden=32,
        embed_dim=16,
        block_width=32,
        energy_hidden=32,
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
