"""
Tests for experiment configuration loading and overrides.
"""

import pytest

from feast_events.config import ExperimentConfig, env_overrides
from feast_events.errors import ConfigError
from feast_events.events import ShapeKind
from feast_events.experiments import load_recordings
from feast_events.feast import ThresholdInit
from feast_events.surface import Channel, Kernel


def test_defaults():
    """Test the default configuration validates."""
    config = ExperimentConfig()

    assert config.surface.roi_w == 11
    assert config.feast.channels == ["ON", "OFF"]
    assert config.classify.type == "elm"
    assert config.sizing.sizes == [10, 25, 50, 100]


def test_from_mapping_coerces_values(small_config):
    """Test dotted keys become typed section fields."""
    assert small_config.dataset.n_classes == 2
    assert small_config.surface.tau_us == 5000.0
    assert small_config.surface.kernel is Kernel.EXPONENTIAL
    assert small_config.sizing.sizes == [2, 4]
    assert small_config.gini_study.roi_choices == [3, 5]


def test_unknown_key():
    """Test unknown sections and keys are reported per key."""
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_mapping({"optimizer.lr": "0.1", "feast": "3"})

    keys = [e["key"] for e in exc.value.details["field_errors"]]
    assert keys == ["optimizer.lr", "feast"]


def test_unknown_field_in_known_section():
    """Test extra fields are rejected."""
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_mapping({"feast.learning_rate": "0.1"})

    assert exc.value.details["field_errors"][0]["key"] == "feast.learning_rate"


def test_invalid_value():
    """Test out-of-range values name their key."""
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_mapping({"feast.eta": "2.0", "surface.roi_w": "4"})

    keys = {e["key"] for e in exc.value.details["field_errors"]}
    assert keys == {"feast.eta", "surface.roi_w"}


def test_nmnist_requires_path():
    """Test the N-MNIST dataset needs a directory."""
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"dataset.kind": "nmnist"})


def test_dataset_shapes():
    """Test per-class shapes parse and set the class count."""
    config = ExperimentConfig.from_mapping(
        {"dataset.shapes": "bar:0:5,ring:90", "dataset.shape_size": "9"}
    )

    specs = config.dataset.shape_specs()
    assert config.dataset.n_classes == 2
    assert [s.kind for s in specs] == [ShapeKind.BAR, ShapeKind.RING]
    assert [s.size for s in specs] == [5, 9]
    assert specs[1].direction_deg == 90.0
    assert ExperimentConfig().dataset.shape_specs() is None


def test_dataset_shapes_invalid():
    """Test bad shapes and a class-count mismatch are config errors."""
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"dataset.shapes": "blob:0"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"dataset.shapes": "bar,ring", "dataset.n_classes": "3"})


def test_dataset_shapes_drive_recordings():
    """Test configured shapes reach the synthetic recordings."""
    base = {"dataset.duration_us": "10000", "dataset.train_per_class": "1"}
    default = ExperimentConfig.from_mapping({**base, "dataset.n_classes": "2"})
    shaped = ExperimentConfig.from_mapping({**base, "dataset.shapes": "ring:90,cross:270"})

    a = load_recordings(default, "train")
    b = load_recordings(shaped, "train")
    assert [r.label for r in b] == [0, 1]
    assert [r.stream for r in a] != [r.stream for r in b]


def test_check_paths(tmp_path):
    """Test a missing dataset directory is a config error."""
    config = ExperimentConfig.from_mapping(
        {"dataset.kind": "nmnist", "dataset.path": str(tmp_path / "missing")}
    )

    with pytest.raises(ConfigError):
        config.check_paths()

    valid = {"dataset.kind": "nmnist", "dataset.path": str(tmp_path)}
    ExperimentConfig.from_mapping(valid).check_paths()


def test_none_and_empty_values():
    """Test 'none' and empty strings clear optional fields."""
    config = ExperimentConfig.from_mapping({"feast.n_features_off": "none", "dataset.url": ""})

    assert config.feast.n_features_off is None
    assert config.dataset.url is None


def test_from_file(config_file, monkeypatch):
    """Test loading a key=value file with environment overrides."""
    monkeypatch.setenv("FEAST_FEAST__SEED", "3")

    assert ExperimentConfig.from_file(config_file).feast.seed == 3
    assert ExperimentConfig.from_file(config_file, use_env=False).feast.seed == 7


def test_from_file_missing(tmp_path):
    """Test a missing config file."""
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.from_file(tmp_path / "nope.env")


def test_from_env(monkeypatch):
    """Test building from the environment alone."""
    monkeypatch.setenv("FEAST_SURFACE__TAU_US", "20000")
    monkeypatch.setenv("FEAST_CLASSIFY__TYPE", "linear")

    config = ExperimentConfig.from_env()

    assert config.surface.tau_us == 20000.0
    assert config.classify.type == "linear"


def test_env_overrides_filters_names():
    """Test only FEAST_<SECTION>__<FIELD> variables are picked up."""
    environ = {"FEAST_SURFACE__TAU_US": "1", "FEAST_DEBUG": "1", "HOME": "/root"}

    assert env_overrides(environ) == {"surface.tau_us": "1"}


def test_config_hash(small_config):
    """Test the config hash is stable and sensitive to every field."""
    digest = small_config.config_hash()

    assert len(digest) == 64
    again = ExperimentConfig.from_mapping(dict(small_config_items(small_config)))
    assert again.config_hash() == digest
    assert small_config.with_overrides(seed=8).config_hash() != digest


def small_config_items(config):
    for line in config.to_lines().splitlines():
        key, _, value = line.partition("=")
        yield key, value


def test_to_lines_roundtrip(small_config):
    """Test rendering and re-parsing gives the same config."""
    again = ExperimentConfig.from_mapping(dict(small_config_items(small_config)))

    assert again == small_config


def test_with_overrides(small_config):
    """Test seed and dotted overrides."""
    config = small_config.with_overrides(seed=42, overrides={"surface.tau_us": "1234"})

    assert config.feast.seed == 42
    assert config.classify.seed == 42
    assert config.surface.tau_us == 1234.0
    # the original is untouched
    assert small_config.feast.seed == 7


def test_with_invalid_override(small_config):
    """Test overrides are validated."""
    with pytest.raises(ConfigError):
        small_config.with_overrides(overrides={"feast.n_features": "0"})


def test_params_for_channels():
    """Test per-channel network parameters."""
    config = ExperimentConfig.from_mapping(
        {
            "feast.n_features": "9",
            "feast.n_features_off": "4",
            "feast.threshold_init": "constant",
        }
    )

    on = config.feast.params_for(Channel.ON, roi_w=5)
    off = config.feast.params_for(Channel.OFF, roi_w=5)

    assert (on.n_features, off.n_features) == (9, 4)
    assert on.roi_w == 5
    assert on.threshold_init is ThresholdInit.CONSTANT
    assert list(config.feast.all_params(5)) == [Channel.ON, Channel.OFF]


def test_channels_must_not_repeat():
    """Test duplicate channels are rejected."""
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"feast.channels": "ON,ON"})
