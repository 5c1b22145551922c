import numpy as np
import pytest

from tsmia.config import config_from_dict


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config_dict(**overrides):
    """A ridge-based pipeline config small enough for sub-second runs."""
    raw = {
        "schema_version": 1,
        "data": {"synthetic": {"users": 12, "length": 300, "variables": 1}},
        "window": {"lookback": 20, "horizon": 5},
        "split": {"train": 3, "val": 2, "test": 3, "aux": 4},
        "forecaster": {"kind": "ridge", "ridge_lambda": 0.001},
        "shadows": {"k": 4},
        "game": {
            "record_samples_per_class": 40,
            "user_records_per_user": 10,
            "calibration_per_class": 30,
        },
        "attack": [
            {"name": "lira", "mode": "online"},
            {"name": "lira", "mode": "offline"},
            {"name": "rmia", "mode": "online", "signal": "mae", "population_size": 50},
        ],
        "seeds": [1],
    }
    raw.update(overrides)
    return raw


@pytest.fixture
def tiny_config():
    return config_from_dict(tiny_config_dict())
