"""Shared fixtures and the --runslow switch for long training checks."""

import numpy as np
import pytest

from mmvp.model import ModelConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training check, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    """Smallest useful model: 8x8 frames, 2x2 matrix grid, two pyramid levels."""
    return ModelConfig(
        height=8, width=8, channels=1, t_observed=2, t_future=1,
        c_img=4, c_motion=4, downsample=4, scales=(1, 2, 4),
    )


@pytest.fixture
def small_config():
    """16x16 frames, T=3 -> 3, with a pyramid level coarser than the matrix grid."""
    return ModelConfig(
        height=16, width=16, channels=1, t_observed=3, t_future=3,
        c_img=4, c_motion=8, downsample=4, scales=(1, 2, 4, 8),
    )
