"""
Experiment configuration.

Configs are plain key=value files (dotenv syntax) with dotted keys, e.g.

    dataset.kind=synth
    surface.tau_us=10000
    feast.n_features=25
    sizing.sizes=10,25,50,100

Environment variables FEAST_<SECTION>__<FIELD> override file values.
"""

from __future__ import annotations

import logging
import os
import typing
from pathlib import Path
from typing import Any, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from feast_events.errors import ConfigError, FeastError
from feast_events.events import ShapeSpec
from feast_events.feast import FeastParams, ThresholdInit
from feast_events.surface import Channel, SurfaceParams
from feast_events.utils.hashing import content_hash

logger = logging.getLogger(__name__)

ENV_PREFIX = "FEAST_"


class DatasetConfig(BaseModel):
    """Where recordings come from."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["synth", "nmnist"] = Field(default="synth", description="Dataset source")
    path: Optional[Path] = Field(default=None, description="N-MNIST root (Train/ and Test/)")
    url: Optional[str] = Field(default=None, description="Archive URL for `feast fetch`")
    train_limit: Optional[int] = Field(default=None, ge=1, description="N-MNIST train subsample")
    test_limit: Optional[int] = Field(default=None, ge=1, description="N-MNIST test subsample")
    n_classes: int = Field(default=4, ge=2, description="Synthetic classes")
    train_per_class: int = Field(default=20, ge=1)
    test_per_class: int = Field(default=10, ge=1)
    velocity_min: float = Field(default=1000.0, gt=0, description="px/s")
    velocity_max: float = Field(default=4000.0, gt=0, description="px/s")
    duration_us: int = Field(default=100_000, ge=1)
    noise_rate: float = Field(default=0.5, ge=0, description="Background activity, Hz per pixel")
    width: int = Field(default=32, ge=1)
    height: int = Field(default=32, ge=1)
    shape_size: int = Field(default=7, ge=1)
    shapes: list[str] = Field(
        default_factory=list,
        description="Per-class shapes as kind[:direction_deg[:size]] (sets n_classes when unset)",
    )
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _classes_from_shapes(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("shapes") and "n_classes" not in data:
            shapes = data["shapes"]
            if isinstance(shapes, str):
                shapes = [s for s in shapes.split(",") if s.strip()]
            data = {**data, "n_classes": len(shapes)}
        return data

    @model_validator(mode="after")
    def _check(self) -> "DatasetConfig":
        if self.shapes and len(self.shapes) != self.n_classes:
            raise ValueError(
                f"dataset.shapes has {len(self.shapes)} entries for {self.n_classes} classes"
            )
        self.shape_specs()
        if self.kind == "nmnist" and self.path is None:
            raise ValueError("dataset.path is required when dataset.kind=nmnist")
        if self.velocity_min > self.velocity_max:
            raise ValueError("velocity_min must not exceed velocity_max")
        return self

    @property
    def velocity_range(self) -> tuple[float, float]:
        return (self.velocity_min, self.velocity_max)

    def shape_specs(self) -> Optional[list[ShapeSpec]]:
        """Parsed `shapes`, or None for the built-in class shapes."""
        if not self.shapes:
            return None
        try:
            return [ShapeSpec.parse(s, default_size=self.shape_size) for s in self.shapes]
        except FeastError as e:
            raise ValueError(e.message) from e
        except ValidationError as e:
            raise ValueError(f"invalid dataset.shapes: {e.errors()[0]['msg']}") from e


class FeastConfig(BaseModel):
    """Network sizes, threshold dynamics and training schedule."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    channels: list[Literal["ON", "OFF"]] = Field(default_factory=lambda: ["ON", "OFF"])
    n_features: int = Field(default=25, ge=1, description="Features of the ON network")
    n_features_off: Optional[int] = Field(
        default=None, ge=1, description="Features of the OFF network (None = n_features)"
    )
    delta_inc: float = Field(default=0.003, gt=0, description="Threshold expansion per miss")
    delta_dec: float = Field(default=0.001, gt=0, description="Threshold contraction per win")
    eta: float = Field(default=0.001, gt=0, lt=1, description="Weight mixing rate")
    threshold_init: ThresholdInit = ThresholdInit.UNIFORM
    threshold_init_value: float = Field(default=0.5, ge=0, le=2)
    threshold_init_std: float = Field(default=0.1, ge=0)
    epochs: int = Field(default=1, ge=1)
    missed_replays: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "FeastConfig":
        if not self.channels:
            raise ValueError("at least one channel is required")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("channels must not repeat")
        return self

    def params_for(self, channel: Channel, roi_w: int) -> FeastParams:
        n = self.n_features
        if channel is Channel.OFF and self.n_features_off is not None:
            n = self.n_features_off
        return FeastParams(
            n_features=n,
            delta_inc=self.delta_inc,
            delta_dec=self.delta_dec,
            eta=self.eta,
            roi_w=roi_w,
            threshold_init=self.threshold_init,
            threshold_init_value=self.threshold_init_value,
            threshold_init_std=self.threshold_init_std,
        )

    def all_params(self, roi_w: int) -> dict[Channel, FeastParams]:
        channels = sorted(Channel[c] for c in self.channels)
        return {ch: self.params_for(ch, roi_w) for ch in channels}


class ClassifyConfig(BaseModel):
    """Classifier input and readout."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    type: Literal["linear", "elm"] = "elm"
    input: Literal["pooled", "time_bins"] = Field(
        default="pooled", description="Windowed pooled counts or a feature x time-bin matrix"
    )
    hidden: int = Field(default=1000, ge=1, description="ELM hidden layer size")
    ridge: float = Field(default=1e-3, gt=0)
    window_us: int = Field(default=3000, ge=1, description="Pooling window")
    bin_ms: float = Field(default=1.0, gt=0)
    n_bins: int = Field(default=316, ge=1)
    normalize: bool = Field(default=True, description="Scale every input vector to unit L2 norm")
    skip_empty_windows: bool = Field(
        default=True, description="Drop pooled windows without events (kept if all are empty)"
    )
    batch_size: int = Field(default=512, ge=1, description="Rows per ELM block update")
    seed: int = Field(default=0, ge=0)


class MonitorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    period: int = Field(default=100, ge=1, description="Sampling period in events")
    window_k: int = Field(default=50, ge=2, description="Plateau window in samples")
    epsilon_rel: float = Field(default=0.1, gt=0, description="Relative plateau tolerance")
    smooth: int = Field(default=1, ge=1, description="Moving average length before the test")


class SizingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    center_energy_frac: float = Field(default=0.8, gt=0, lt=1)
    sizes: list[int] = Field(default_factory=lambda: [10, 25, 50, 100])
    trials: int = Field(default=5, ge=1)
    target_min: float = Field(default=2, ge=0)
    target_max: float = Field(default=4, ge=0)
    channel: Literal["ON", "OFF"] = "ON"
    max_workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "SizingConfig":
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ValueError("sizes must be a non-empty list of positive integers")
        if self.target_min > self.target_max:
            raise ValueError("target_min must not exceed target_max")
        return self


class GiniStudyConfig(BaseModel):
    """Ranges the random feature-set configurations are drawn from."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_configs: int = Field(default=30, ge=2)
    tau_min_us: float = Field(default=1000.0, gt=0)
    tau_max_us: float = Field(default=50_000.0, gt=0)
    n_features_min: int = Field(default=2, ge=1)
    n_features_max: int = Field(default=40, ge=1)
    roi_choices: list[int] = Field(default_factory=lambda: [3, 5, 7, 9, 11])
    eta_min: float = Field(default=1e-4, gt=0, lt=1)
    eta_max: float = Field(default=0.05, gt=0, lt=1)
    delta_min: float = Field(default=1e-4, gt=0)
    delta_max: float = Field(default=0.01, gt=0)
    train_fraction_min: float = Field(default=0.2, gt=0, le=1)
    train_fraction_max: float = Field(default=1.0, gt=0, le=1)

    @model_validator(mode="after")
    def _check(self) -> "GiniStudyConfig":
        for lo, hi in (
            ("tau_min_us", "tau_max_us"),
            ("n_features_min", "n_features_max"),
            ("eta_min", "eta_max"),
            ("delta_min", "delta_max"),
            ("train_fraction_min", "train_fraction_max"),
        ):
            if getattr(self, lo) > getattr(self, hi):
                raise ValueError(f"{lo} must not exceed {hi}")
        if not self.roi_choices or any(w < 1 or w % 2 == 0 for w in self.roi_choices):
            raise ValueError("roi_choices must be odd positive integers")
        return self


class ExperimentConfig(BaseModel):
    """
    Root configuration of an experiment.

    Can be built directly, from a key=value file with from_file(), or from
    the environment alone with from_env().

    Environment variables:
        FEAST_<SECTION>__<FIELD>: Override `section.field`, e.g.
            FEAST_FEAST__SEED=3 or FEAST_SURFACE__TAU_US=20000
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    surface: SurfaceParams = Field(default_factory=SurfaceParams)
    feast: FeastConfig = Field(default_factory=FeastConfig)
    classify: ClassifyConfig = Field(default_factory=ClassifyConfig)
    monitor: MonitorConfig = Field(default_factory=MonitorConfig)
    sizing: SizingConfig = Field(default_factory=SizingConfig)
    gini_study: GiniStudyConfig = Field(default_factory=GiniStudyConfig)

    # ------------------------------------------------------------------
    # Loading
    # ------------------------------------------------------------------

    @classmethod
    def from_mapping(cls, flat: Mapping[str, Optional[str]]) -> "ExperimentConfig":
        """
        Build from dotted `section.field` -> raw string values.

        Raises:
            ConfigError: With one {"key", "reason"} entry per invalid field
        """
        nested: dict[str, dict[str, Any]] = {}
        field_errors: list[dict[str, str]] = []
        for key, raw in flat.items():
            section, _, name = key.strip().lower().partition(".")
            if section not in cls.model_fields or not name:
                field_errors.append({"key": key, "reason": "unknown key"})
                continue
            if raw is None:
                field_errors.append({"key": key, "reason": "missing value"})
                continue
            nested.setdefault(section, {})[name] = _coerce(section, name, raw)

        if field_errors:
            raise ConfigError("Invalid configuration keys", field_errors=field_errors)
        try:
            return cls.model_validate(nested)
        except ValidationError as e:
            raise ConfigError(
                f"Configuration failed validation ({e.error_count()} error(s))",
                field_errors=_field_errors(e),
            ) from e

    @classmethod
    def from_file(cls, path: Path | str, use_env: bool = True) -> "ExperimentConfig":
        """
        Load a key=value config file, optionally overlaid with FEAST_* variables.

        Example:
            >>> config = ExperimentConfig.from_file("experiments/plane.env")
            >>> config.feast.n_features
            25
        """
        path = Path(path)
        if not path.is_file():
            raise ConfigError(
                "Config file not found", field_errors=[{"key": "--config", "reason": str(path)}]
            )
        values = dict(dotenv_values(path))
        if use_env:
            values.update(env_overrides())
        config = cls.from_mapping(values)
        logger.debug(f"Loaded config {path} (hash {config.config_hash()[:12]})")
        return config

    @classmethod
    def from_env(cls) -> "ExperimentConfig":
        return cls.from_mapping(env_overrides())

    # ------------------------------------------------------------------
    # Derived values
    # ------------------------------------------------------------------

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the validated config."""
        return content_hash(self.model_dump(mode="json"), length=64)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        overrides: Optional[Mapping[str, str]] = None,
    ) -> "ExperimentConfig":
        """
        Copy with the feature and classifier seeds replaced and/or dotted
        overrides applied.
        """
        config = self
        if overrides:
            flat = _flatten(config.model_dump(mode="json"))
            flat.update({k.lower(): v for k, v in overrides.items()})
            config = ExperimentConfig.from_mapping(flat)
        if seed is not None:
            config = config.model_copy(
                update={
                    "feast": config.feast.model_copy(update={"seed": seed}),
                    "classify": config.classify.model_copy(update={"seed": seed}),
                }
            )
        return config

    def check_paths(self) -> None:
        """
        Raises:
            ConfigError: If a referenced path does not exist
        """
        if self.dataset.kind == "nmnist" and not (self.dataset.path and self.dataset.path.is_dir()):
            raise ConfigError(
                "Dataset path does not exist",
                field_errors=[
                    {"key": "dataset.path", "reason": f"not a directory: {self.dataset.path}"}
                ],
            )

    def to_lines(self) -> str:
        """Render as a key=value file (round-trips through from_mapping)."""
        flat = _flatten(self.model_dump(mode="json"))
        return "".join(f"{k}={v}\n" for k, v in sorted(flat.items()))


# ============================================================================
# Helpers
# ============================================================================


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict[str, str]:
    """FEAST_<SECTION>__<FIELD> variables as dotted keys."""
    environ = os.environ if environ is None else environ
    out: dict[str, str] = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, _, field = name[len(ENV_PREFIX) :].partition("__")
        out[f"{section.lower()}.{field.lower()}"] = value
    return out


def _is_list_field(section: str, name: str) -> bool:
    model = ExperimentConfig.model_fields[section].annotation
    fields = getattr(model, "model_fields", {})
    if name not in fields:
        return False
    annotation = fields[name].annotation
    return typing.get_origin(annotation) is list


def _coerce(section: str, name: str, raw: str) -> Any:
    value = raw.strip()
    if _is_list_field(section, name):
        return [item.strip() for item in value.split(",") if item.strip()]
    if value == "" or value.lower() == "none":
        return None
    return value


def _flatten(nested: Mapping[str, Any]) -> dict[str, str]:
    flat: dict[str, str] = {}
    for section, fields in nested.items():
        for name, value in fields.items():
            if value is None:
                text = "none"
            elif isinstance(value, list):
                text = ",".join(str(v) for v in value)
            else:
                text = str(value)
            flat[f"{section}.{name}"] = text
    return flat


def _field_errors(error: ValidationError) -> list[dict[str, str]]:
    return [
        {"key": ".".join(str(part) for part in err["loc"]), "reason": err["msg"]}
        for err in error.errors()
    ]
