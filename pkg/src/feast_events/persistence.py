"""
Self-describing artifact files.

Every writer is byte-deterministic: JSON goes through pydantic with sorted
keys, floats are written in shortest round-trip form and no timestamps or run
IDs are embedded. Each file carries the hash of the config that produced it.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from feast_events.classify import ELMModel, LinearModel, elm_random_layer
from feast_events.errors import ArtifactError
from feast_events.feast import FeastModel, FeastNetwork, FeastParams, FeatureEventStream
from feast_events.monitor import MonitorLog, MonitorSample
from feast_events.surface import Channel, SurfaceParams

logger = logging.getLogger(__name__)

FEATURES_FORMAT = "feast.features/1"
CLASSIFIER_FORMAT = "feast.classifier/1"
MONITOR_COLUMNS = ("event_index", "d_weights", "d_thresholds", "missed_rate", "spike_rate_std")
FEATURE_EVENT_COLUMNS = ("recording", "label", "channel", "feature", "t")


def _read_text(path: Path | str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Cannot read artifact: {e}", path=str(path)) from e


def _write_text(path: Path | str, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def dump_json(payload: Any) -> str:
    """Sorted keys, indent 2, trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_json(path: Path | str, payload: Any) -> Path:
    return _write_text(path, dump_json(payload))


def _load_model_file(model: type[BaseModel], path: Path | str) -> Any:
    try:
        return model.model_validate_json(_read_text(path))
    except ValidationError as e:
        raise ArtifactError(
            f"Invalid {model.__name__}: {e.error_count()} error(s)", path=str(path)
        ) from e


# ============================================================================
# Feature sets
# ============================================================================


class ChannelRecord(BaseModel):
    """One trained per-polarity network."""

    model_config = ConfigDict(frozen=True)

    channel: Literal["ON", "OFF"]
    n_features: int = Field(..., ge=1)
    roi_w: int = Field(..., ge=1)
    params: FeastParams
    thresholds: list[float]
    win_counts: list[int]
    weights: list[list[float]] = Field(..., description="Row-major, one row per feature")


class FeatureSetFile(BaseModel):
    """Feature file: the networks of a model plus the surface they were trained on."""

    model_config = ConfigDict(frozen=True)

    format: Literal["feast.features/1"] = FEATURES_FORMAT
    config_hash: str
    surface: SurfaceParams
    channels: list[ChannelRecord]

    @classmethod
    def from_model(
        cls, model: FeastModel, surface: SurfaceParams, config_hash: str
    ) -> "FeatureSetFile":
        return cls(
            config_hash=config_hash,
            surface=surface,
            channels=[
                ChannelRecord(
                    channel=ch.name,  # type: ignore[arg-type]
                    n_features=net.n_features,
                    roi_w=net.roi_w,
                    params=net.params,
                    thresholds=net.thresholds.tolist(),
                    win_counts=net.win_counts.tolist(),
                    weights=net.weights.tolist(),
                )
                for ch, net in model.networks.items()
            ],
        )

    def to_model(self) -> FeastModel:
        networks: dict[Channel, FeastNetwork] = {}
        for record in self.channels:
            ch = Channel[record.channel]
            networks[ch] = FeastNetwork(
                record.params,
                np.array(record.weights, dtype=np.float64),
                np.array(record.thresholds, dtype=np.float64),
                np.array(record.win_counts, dtype=np.int64),
                ch,
            )
        return FeastModel(networks)


def save_features(
    path: Path | str, model: FeastModel, surface: SurfaceParams, config_hash: str
) -> Path:
    file = FeatureSetFile.from_model(model, surface, config_hash)
    return write_json(path, file.model_dump(mode="json"))


def load_features(path: Path | str) -> FeatureSetFile:
    """
    Raises:
        ArtifactError: If the file is missing, not JSON or not a feature file
    """
    file: FeatureSetFile = _load_model_file(FeatureSetFile, path)
    return file


# ============================================================================
# CSV with a comment header
# ============================================================================


def _header_line(fields: dict[str, Any]) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in fields.items()) + "\n"


def _parse_header(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        return {}
    pairs = (item.split("=", 1) for item in line[1:].split() if "=" in item)
    return {k: v for k, v in pairs}


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def render_csv(
    header: dict[str, Any], columns: Sequence[str], rows: Iterable[Sequence[Any]]
) -> str:
    buffer = io.StringIO()
    buffer.write(_header_line(header))
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def write_csv(
    path: Path | str,
    header: dict[str, Any],
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> Path:
    return _write_text(path, render_csv(header, columns, rows))


def read_csv(path: Path | str) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Comment header fields and the data rows as dicts."""
    lines = _read_text(path).splitlines()
    header = _parse_header(lines[0]) if lines else {}
    body = lines[1:] if header or (lines and lines[0].startswith("#")) else lines
    return header, list(csv.DictReader(body))


# ============================================================================
# Monitor logs
# ============================================================================


def write_monitor_csv(
    path: Path | str, log: MonitorLog, config_hash: str, channel: Channel
) -> Path:
    rows = (
        (s.event_index, s.d_weights, s.d_thresholds, s.missed_rate, s.spike_rate_std)
        for s in log.samples
    )
    header = {"config_hash": config_hash, "channel": channel.name, "period": log.period}
    return write_csv(path, header, MONITOR_COLUMNS, rows)


def read_monitor_csv(path: Path | str) -> tuple[MonitorLog, dict[str, str]]:
    header, rows = read_csv(path)
    try:
        samples = [
            MonitorSample(
                event_index=int(r["event_index"]),
                d_weights=float(r["d_weights"]),
                d_thresholds=float(r["d_thresholds"]),
                missed_rate=float(r["missed_rate"]),
                spike_rate_std=float(r["spike_rate_std"]),
            )
            for r in rows
        ]
        if "period" in header:
            period = int(header["period"])
        elif len(samples) > 1:
            period = samples[1].event_index - samples[0].event_index
        else:
            period = samples[0].event_index if samples else 100
        return MonitorLog(period=period, samples=samples), header
    except (KeyError, ValueError) as e:
        raise ArtifactError(f"Invalid monitor log: {e}", path=str(path)) from e


# ============================================================================
# Feature events
# ============================================================================


class LabelledFeatureEvents(BaseModel):
    """Feature events of one recording."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    recording_id: str
    label: int
    events: FeatureEventStream


def write_feature_events(
    path: Path | str,
    recordings: Sequence[LabelledFeatureEvents],
    config_hash: str,
    sizes: tuple[int, int],
) -> Path:
    def rows() -> Iterable[tuple[Any, ...]]:
        for rec in recordings:
            ev = rec.events
            for c, f, t in zip(ev.channel.tolist(), ev.feature.tolist(), ev.t.tolist()):
                yield rec.recording_id, rec.label, Channel(c).name, f, t

    header = {"config_hash": config_hash, "on_features": sizes[0], "off_features": sizes[1]}
    return write_csv(path, header, FEATURE_EVENT_COLUMNS, rows())


def read_feature_events(path: Path | str) -> list[LabelledFeatureEvents]:
    """Recordings in file order; recordings without events are not represented."""
    header, rows = read_csv(path)
    try:
        sizes = (int(header["on_features"]), int(header["off_features"]))
        grouped: dict[str, tuple[int, list[int], list[int], list[int]]] = {}
        for r in rows:
            entry = grouped.setdefault(r["recording"], (int(r["label"]), [], [], []))
            entry[1].append(int(r["feature"]))
            entry[2].append(int(r["t"]))
            entry[3].append(int(Channel[r["channel"]]))
    except (KeyError, ValueError) as e:
        raise ArtifactError(f"Invalid feature-event file: {e}", path=str(path)) from e
    return [
        LabelledFeatureEvents(
            recording_id=rid,
            label=label,
            events=FeatureEventStream.from_lists(f, t, c, sizes),
        )
        for rid, (label, f, t, c) in grouped.items()
    ]


# ============================================================================
# Classifiers
# ============================================================================


class ClassifierFile(BaseModel):
    """
    Trained readout. ELM input weights are not stored: they are regenerated
    from `seed`.
    """

    model_config = ConfigDict(frozen=True)

    format: Literal["feast.classifier/1"] = CLASSIFIER_FORMAT
    kind: Literal["linear", "elm"]
    config_hash: str
    input_dim: int = Field(..., ge=1)
    n_classes: int = Field(..., ge=1)
    ridge: float = Field(..., gt=0)
    output_weights: list[list[float]]
    seed: Optional[int] = None
    hidden: Optional[int] = None
    inverse_corr: Optional[list[list[float]]] = None
    n_updates: int = 0

    @classmethod
    def from_model(
        cls, model: Union[LinearModel, ELMModel], config_hash: str
    ) -> "ClassifierFile":
        if isinstance(model, LinearModel):
            return cls(
                kind="linear",
                config_hash=config_hash,
                input_dim=model.input_dim,
                n_classes=model.n_classes,
                ridge=model.ridge,
                output_weights=model.weights.tolist(),
            )
        return cls(
            kind="elm",
            config_hash=config_hash,
            input_dim=model.input_dim,
            n_classes=model.n_classes,
            ridge=model.ridge,
            output_weights=model.output_weights.tolist(),
            seed=model.seed,
            hidden=model.hidden,
            inverse_corr=model.inverse_corr.tolist(),
            n_updates=model.n_updates,
        )

    def to_model(self) -> Union[LinearModel, ELMModel]:
        weights = np.array(self.output_weights, dtype=np.float64)
        if self.kind == "linear":
            return LinearModel(weights=weights, ridge=self.ridge)
        if self.seed is None or self.hidden is None or self.inverse_corr is None:
            raise ArtifactError("ELM classifier file lacks seed, hidden or inverse_corr")
        W, b = elm_random_layer(self.input_dim, self.hidden, self.seed)
        return ELMModel(
            seed=self.seed,
            ridge=self.ridge,
            input_weights=W,
            hidden_bias=b,
            output_weights=weights,
            inverse_corr=np.array(self.inverse_corr, dtype=np.float64),
            n_updates=self.n_updates,
        )


def save_classifier(
    path: Path | str, model: Union[LinearModel, ELMModel], config_hash: str
) -> Path:
    file = ClassifierFile.from_model(model, config_hash)
    return write_json(path, file.model_dump(mode="json", exclude_none=True))


def load_classifier(path: Path | str) -> Union[LinearModel, ELMModel]:
    file: ClassifierFile = _load_model_file(ClassifierFile, path)
    return file.to_model()
