"""Constructor invariants for the public config dataclasses."""

import numpy as np
import pytest

from spikefed import (
    AttackerRole,
    ConfigurationError,
    FLConfig,
    LIFConfig,
    PartitionConfig,
    StripConfig,
    SurrogateConfig,
    TrainConfig,
    TriggerSpec,
)
from spikefed.fl import select_devices


@pytest.mark.parametrize(
    "kwargs",
    [
        {"threshold": 0.0},
        {"threshold": -1.0},
        {"tau": 1.0},
        {"tau": 0.5},
    ],
)
def test_lif_config_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        LIFConfig(**kwargs)


def test_surrogate_width_positive():
    with pytest.raises(ConfigurationError):
        SurrogateConfig(width=0.0)


@pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"batch_size": 0},
                                    {"learning_rate": -0.1}, {"optimizer": "lbfgs"}])
def test_train_config_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [{"num_devices": 0}, {"non_iid_degree": -0.1},
                                    {"non_iid_degree": 1.5}])
def test_partition_config_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        PartitionConfig(**{"num_devices": 2, **kwargs})


@pytest.mark.parametrize("kwargs", [{"num_devices": 0}, {"selection_fraction": 0.0},
                                    {"selection_fraction": 1.5}, {"rounds": 0}])
def test_fl_config_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        FLConfig(**{"num_devices": 4, **kwargs})


@pytest.mark.parametrize(
    "n,fraction,expected",
    [(10, 1.0, 10), (10, 0.1, 1), (10, 0.05, 1), (25, 0.1, 3), (50, 0.1, 5), (3, 0.5, 2)],
)
def test_selected_count_rule(n, fraction, expected):
    # max(1, round(fraction * n)), half rounded up
    assert FLConfig(num_devices=n, selection_fraction=fraction).selected_per_round == expected
    assert len(select_devices(n, fraction, round_seed=0)) == expected


@pytest.mark.parametrize("kwargs", [{"area_fraction": 0.0}, {"area_fraction": 1.0},
                                    {"polarity_channel": -1}])
def test_trigger_spec_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        TriggerSpec(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"poison_rate": 0.0},
        {"poison_rate": 1.5},
        {"gamma": 0.5},
        {"frame_mask": np.zeros(4, dtype=bool)},
    ],
)
def test_attacker_role_invariants(kwargs):
    base = {"target_label": 0, "frame_mask": np.ones(4, dtype=bool)}
    with pytest.raises(ConfigurationError):
        AttackerRole(**{**base, **kwargs})


@pytest.mark.parametrize("kwargs", [{"num_overlays": 1}, {"target_frr": 0.0},
                                    {"target_frr": 0.5}])
def test_strip_config_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        StripConfig(**kwargs)
