"""Shared fixtures and the --runslow switch for the long statistical runs."""

import numpy as np
import pytest

from pdpm_lab.config import parse_config
from pdpm_lab.training import ModelConfig, TrainConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the long training/acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long statistical run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_model():
    return ModelConfig(latent_dim=4, g_width=8, g_depth=2, d_width=8, d_depth=2)


@pytest.fixture
def tiny_train(tiny_model):
    return TrainConfig(objective="vanilla", lam=1.0, m=8, total_generator_steps=6,
                       checkpoint_interval=3, log_interval=3, seed=7, model=tiny_model)


@pytest.fixture
def tiny_experiment():
    """Experiment that trains and evaluates in well under a second."""
    return parse_config({
        "dataset": {"name": "ring8"},
        "train": {
            "objective": "vanilla", "lam": 1.0, "m": 8, "total_generator_steps": 6,
            "checkpoint_interval": 3, "log_interval": 3, "seed": 3,
            "model": {"latent_dim": 4, "g_width": 8, "g_depth": 2, "d_width": 8, "d_depth": 2},
        },
        "metrics": {"n_eval_samples": 200, "probe_pairs": 12, "probe_steps": 5},
        "n_seeds": 3,
        "lambdas": [0, 1],
        "plots": {"n_samples": 50, "interpolation": True},
    })
