"""Shared fixtures: tiny configs and streams so the suite runs in seconds."""

from pathlib import Path

import numpy as np
import pytest

from feast_events.config import ExperimentConfig
from feast_events.events import EventStream


SMALL_CONFIG = {
    "dataset.kind": "synth",
    "dataset.n_classes": "2",
    "dataset.train_per_class": "3",
    "dataset.test_per_class": "2",
    "dataset.duration_us": "20000",
    "dataset.width": "16",
    "dataset.height": "16",
    "dataset.shape_size": "5",
    "dataset.velocity_min": "1000",
    "dataset.velocity_max": "2000",
    "dataset.noise_rate": "1.0",
    "surface.roi_w": "5",
    "surface.tau_us": "5000",
    "feast.n_features": "4",
    "feast.seed": "7",
    "classify.type": "linear",
    "classify.window_us": "5000",
    "classify.seed": "7",
    "monitor.period": "10",
    "monitor.window_k": "4",
    "sizing.sizes": "2,4",
    "sizing.trials": "2",
    "gini_study.n_configs": "2",
    "gini_study.n_features_max": "6",
    "gini_study.roi_choices": "3,5",
}


@pytest.fixture
def small_config() -> ExperimentConfig:
    """A fast synthetic experiment."""
    return ExperimentConfig.from_mapping(SMALL_CONFIG)


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    """SMALL_CONFIG written as a key=value file."""
    path = tmp_path / "experiment.env"
    path.write_text("".join(f"{k}={v}\n" for k, v in SMALL_CONFIG.items()))
    return path


@pytest.fixture
def tiny_stream() -> EventStream:
    """Four ON/OFF events on a 5x5 sensor."""
    return EventStream(
        width=5,
        height=5,
        x=[0, 1, 2, 2],
        y=[0, 1, 2, 3],
        t=[10, 20, 20, 35],
        p=[1, -1, 1, 1],
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
