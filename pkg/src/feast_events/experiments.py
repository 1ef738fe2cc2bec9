"""
Experiment orchestration behind the CLI.

Each cmd_* function takes a validated ExperimentConfig, does its work
deterministically from the configured seeds and writes self-describing
artifacts. The click layer in cli.py only parses options and reports.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from feast_events.classify import (
    ELMModel,
    EvaluationReport,
    LinearModel,
    elm_init,
    elm_predict_batch,
    elm_update_batch,
    evaluate,
    linear_predict_batch,
    linear_train,
    majority_vote,
    pool_counts,
    pool_raw_events,
    time_bin_matrix,
)
from feast_events.config import ExperimentConfig
from feast_events.datasets import Recording, load_nmnist_split, synth_dataset
from feast_events.errors import ParameterError, UndefinedInputError
from feast_events.feast import FeastModel, TrainResult, infer_stream, init_model, train_recordings
from feast_events.monitor import detect_convergence, gini, spearman
from feast_events.persistence import (
    LabelledFeatureEvents,
    load_features,
    read_monitor_csv,
    render_csv,
    save_classifier,
    save_features,
    write_csv,
    write_feature_events,
    write_json,
    write_monitor_csv,
)
from feast_events.sizing import NoiseCriterion, SizeSweepResult, size_sweep
from feast_events.surface import Channel, SurfaceParams, SurfaceState, sample_frame, write_event

logger = logging.getLogger(__name__)

Split = Literal["train", "test"]
Source = Literal["raw", "random", "feast"]
Readout = Union[LinearModel, ELMModel]


# ============================================================================
# Data
# ============================================================================


def _split_seed(seed: int, split: Split) -> int:
    return int(np.random.SeedSequence([seed, 0 if split == "train" else 1]).generate_state(1)[0])


def load_recordings(config: ExperimentConfig, split: Split) -> list[Recording]:
    """Training or test recordings of the configured dataset."""
    ds = config.dataset
    if ds.kind == "nmnist":
        config.check_paths()
        assert ds.path is not None
        limit = ds.train_limit if split == "train" else ds.test_limit
        return load_nmnist_split(ds.path, "Train" if split == "train" else "Test", limit, ds.seed)
    return synth_dataset(
        n_classes=ds.n_classes,
        recordings_per_class=ds.train_per_class if split == "train" else ds.test_per_class,
        velocity_range=ds.velocity_range,
        duration_us=ds.duration_us,
        noise_rate=ds.noise_rate,
        seed=_split_seed(ds.seed, split),
        width=ds.width,
        height=ds.height,
        shape_size=ds.shape_size,
        shapes=ds.shape_specs(),
    )


def n_classes_of(config: ExperimentConfig, recordings: Sequence[Recording]) -> int:
    if config.dataset.kind == "synth":
        return config.dataset.n_classes
    return max(r.label for r in recordings) + 1


def _duration(recording: Recording) -> int:
    t = recording.stream.t
    return int(t[-1]) + 1 if len(t) else 1


# ============================================================================
# Features
# ============================================================================


def build_model(config: ExperimentConfig) -> FeastModel:
    return init_model(config.feast.all_params(config.surface.roi_w), config.feast.seed)


def train_features(
    config: ExperimentConfig, recordings: Sequence[Recording], model: Optional[FeastModel] = None
) -> TrainResult:
    model = model if model is not None else build_model(config)
    return train_recordings(
        model,
        [r.stream for r in recordings],
        config.surface,
        epochs=config.feast.epochs,
        missed_replays=config.feast.missed_replays,
        monitor_period=config.monitor.period,
    )


def infer_recordings(
    model: FeastModel, surface: SurfaceParams, recordings: Sequence[Recording]
) -> list[LabelledFeatureEvents]:
    return [
        LabelledFeatureEvents(
            recording_id=r.recording_id,
            label=r.label,
            events=infer_stream(model, r.stream, surface),
        )
        for r in recordings
    ]


def inference_gini(events: Sequence[LabelledFeatureEvents]) -> Optional[float]:
    """Gini of per-feature inference event counts summed over recordings."""
    if not events:
        return None
    counts = np.sum([e.events.feature_counts() for e in events], axis=0)
    try:
        return gini(counts)
    except UndefinedInputError:
        return None


# ============================================================================
# Classification
# ============================================================================


class RecordingInputs(BaseModel):
    """Classifier input rows (one per window or one per recording)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rows: np.ndarray
    label: int
    recording_id: str


class ClassificationOutcome(BaseModel):
    """Per-window and per-recording (majority vote) scores of one readout."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    readout: Readout
    frame: EvaluationReport
    recording: EvaluationReport


def _prepare_rows(rows: np.ndarray, config: ExperimentConfig) -> np.ndarray:
    rows = rows.astype(np.float64)
    if config.classify.input == "pooled" and config.classify.skip_empty_windows:
        busy = rows.sum(axis=1) > 0
        if busy.any():
            rows = rows[busy]
    if config.classify.normalize:
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        rows = np.divide(rows, norms, out=np.zeros_like(rows), where=norms > 0)
    return rows


def feature_inputs(
    config: ExperimentConfig,
    events: Sequence[LabelledFeatureEvents],
    recordings: Sequence[Recording],
) -> list[RecordingInputs]:
    """Pooled windows or time-bin vectors of feature events."""
    cls = config.classify
    out = []
    for ev, rec in zip(events, recordings):
        if cls.input == "pooled":
            rows = pool_counts(ev.events, cls.window_us, _duration(rec))
        else:
            rows = time_bin_matrix(ev.events, None, cls.bin_ms, cls.n_bins).vector()[None, :]
        out.append(
            RecordingInputs(
                rows=_prepare_rows(rows, config), label=ev.label, recording_id=ev.recording_id
            )
        )
    return out


def raw_inputs(config: ExperimentConfig, recordings: Sequence[Recording]) -> list[RecordingInputs]:
    """
    Pooled raw pixel events. Raw inputs are always pooled: a pixel x time-bin
    matrix is too large for the readouts.
    """
    pooled = config.model_copy(
        update={"classify": config.classify.model_copy(update={"input": "pooled"})}
    )
    return [
        RecordingInputs(
            rows=_prepare_rows(
                pool_raw_events(r.stream, config.classify.window_us, _duration(r)), pooled
            ),
            label=r.label,
            recording_id=r.recording_id,
        )
        for r in recordings
    ]


def _stack(inputs: Sequence[RecordingInputs]) -> tuple[np.ndarray, np.ndarray]:
    X = np.vstack([i.rows for i in inputs])
    y = np.concatenate([np.full(len(i.rows), i.label, dtype=np.int64) for i in inputs])
    return X, y


def fit_readout(config: ExperimentConfig, X: np.ndarray, y: np.ndarray, n_classes: int) -> Readout:
    cls = config.classify
    if cls.type == "linear":
        return linear_train(X, y, cls.ridge, n_classes)
    model = elm_init(X.shape[1], cls.hidden, n_classes, cls.seed, cls.ridge)
    for start in range(0, len(X), cls.batch_size):
        stop = start + cls.batch_size
        elm_update_batch(model, X[start:stop], y[start:stop])
    return model


def predict_rows(readout: Readout, X: np.ndarray) -> np.ndarray:
    if isinstance(readout, LinearModel):
        return linear_predict_batch(readout, X)
    return elm_predict_batch(readout, X)


def classify_inputs(
    config: ExperimentConfig,
    train: Sequence[RecordingInputs],
    test: Sequence[RecordingInputs],
    n_classes: int,
) -> ClassificationOutcome:
    """Train a readout on every training row; score test rows and recordings."""
    X, y = _stack(train)
    readout = fit_readout(config, X, y, n_classes)
    frame_pred: list[np.ndarray] = []
    votes: list[int] = []
    for rec in test:
        pred = predict_rows(readout, rec.rows)
        frame_pred.append(pred)
        votes.append(majority_vote(pred))
    _, y_test = _stack(test)
    return ClassificationOutcome(
        readout=readout,
        frame=evaluate(np.concatenate(frame_pred), y_test, n_classes),
        recording=evaluate(votes, [r.label for r in test], n_classes),
    )


# ============================================================================
# Commands
# ============================================================================


class TrainArtifacts(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    features_path: Path
    monitor_paths: dict[str, Path]
    result: TrainResult
    converged_at: dict[str, Optional[int]] = Field(default_factory=dict)


def cmd_train(config: ExperimentConfig, out_dir: Path | str) -> TrainArtifacts:
    """Train feature networks; write features.json and monitor_<CH>.csv."""
    out_dir = Path(out_dir)
    recordings = load_recordings(config, "train")
    logger.info(f"Training on {len(recordings)} recordings")
    result = train_features(config, recordings)
    digest = config.config_hash()

    features_path = save_features(out_dir / "features.json", result.model, config.surface, digest)
    monitor_paths: dict[str, Path] = {}
    converged: dict[str, Optional[int]] = {}
    for ch, log in result.monitor_logs.items():
        monitor_paths[ch.name] = write_monitor_csv(
            out_dir / f"monitor_{ch.name}.csv", log, digest, ch
        )
        converged[ch.name] = detect_convergence(
            log, config.monitor.window_k, config.monitor.epsilon_rel, config.monitor.smooth
        )
        logger.info(f"Channel {ch.name}: convergence at event {converged[ch.name]}")
    return TrainArtifacts(
        features_path=features_path,
        monitor_paths=monitor_paths,
        result=result,
        converged_at=converged,
    )


def cmd_infer(
    config: ExperimentConfig, features_path: Path | str, out: Path | str, split: Split = "test"
) -> Path:
    """Assign every event of the split to its nearest feature; write the feature-event CSV."""
    file = load_features(features_path)
    model = file.to_model()
    events = infer_recordings(model, file.surface, load_recordings(config, split))
    return write_feature_events(out, events, file.config_hash, model.sizes)


def _metrics_payload(
    config_hash: str,
    features_hash: Optional[str],
    source: str,
    outcome: ClassificationOutcome,
    gini_value: Optional[float],
    n_train: int,
    n_test: int,
) -> dict[str, object]:
    rec = outcome.recording
    return {
        "config_hash": config_hash,
        "features_config_hash": features_hash,
        "source": source,
        "n_train": n_train,
        "n_test": n_test,
        "accuracy_frame": outcome.frame.accuracy,
        "accuracy_recording": rec.accuracy,
        "confusion": rec.confusion,
        "precision": rec.precision,
        "recall": rec.recall,
        "gini": gini_value,
    }


def evaluate_model(
    config: ExperimentConfig,
    model: FeastModel,
    surface: SurfaceParams,
    train: Sequence[Recording],
    test: Sequence[Recording],
) -> tuple[ClassificationOutcome, Optional[float]]:
    """Infer on both splits, classify, and measure the test-set Gini."""
    train_events = infer_recordings(model, surface, train)
    test_events = infer_recordings(model, surface, test)
    outcome = classify_inputs(
        config,
        feature_inputs(config, train_events, train),
        feature_inputs(config, test_events, test),
        n_classes_of(config, list(train) + list(test)),
    )
    return outcome, inference_gini(test_events)


def cmd_evaluate(
    config: ExperimentConfig,
    features_path: Path | str,
    out: Path | str,
    random_baseline: bool = False,
    classifier_out: Optional[Path | str] = None,
) -> dict[str, object]:
    """
    Classify with the stored features (or an untrained model of the same
    shape) and write the metrics JSON.
    """
    file = load_features(features_path)
    model = file.to_model()
    source = "feast"
    if random_baseline:
        model = model.random_like(config.feast.seed)
        source = "random"
    train = load_recordings(config, "train")
    test = load_recordings(config, "test")
    outcome, gini_value = evaluate_model(config, model, file.surface, train, test)
    payload = _metrics_payload(
        config.config_hash(), file.config_hash, source, outcome, gini_value, len(train), len(test)
    )
    write_json(out, payload)
    if classifier_out is not None:
        save_classifier(classifier_out, outcome.readout, config.config_hash())
    logger.info(
        f"✅ {source}: frame accuracy {outcome.frame.accuracy:.4f}, "
        f"recording accuracy {outcome.recording.accuracy:.4f}"
    )
    return payload


class SourceSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    accuracies: list[float]
    frame_accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def compare_feature_sources(
    config: ExperimentConfig, trials: int = 3
) -> dict[str, SourceSummary]:
    """
    Recording accuracy of raw events, random features and trained features
    over `trials` feature seeds; the data and readout are shared by all
    sources within a trial.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1", "trials", trials)
    train = load_recordings(config, "train")
    test = load_recordings(config, "test")
    n_classes = n_classes_of(config, list(train) + list(test))
    scores: dict[str, tuple[list[float], list[float]]] = {
        s: ([], []) for s in ("raw", "random", "feast")
    }

    raw = classify_inputs(config, raw_inputs(config, train), raw_inputs(config, test), n_classes)
    for trial in range(trials):
        trial_config = config.with_overrides(seed=config.feast.seed + trial)
        # the untrained initialization of the network that is about to be trained
        random_model = build_model(trial_config)
        trained = train_features(trial_config, train).model
        for source, model in (("random", random_model), ("feast", trained)):
            outcome, _ = evaluate_model(trial_config, model, config.surface, train, test)
            scores[source][0].append(outcome.recording.accuracy)
            scores[source][1].append(outcome.frame.accuracy)
        # raw inputs do not depend on the feature seed
        scores["raw"][0].append(raw.recording.accuracy)
        scores["raw"][1].append(raw.frame.accuracy)
        logger.info(
            f"Trial {trial + 1}/{trials}: raw={scores['raw'][0][-1]:.4f} "
            f"random={scores['random'][0][-1]:.4f} feast={scores['feast'][0][-1]:.4f}"
        )
    return {
        s: SourceSummary(accuracies=acc, frame_accuracies=frame)
        for s, (acc, frame) in scores.items()
    }


def cmd_compare(config: ExperimentConfig, trials: int, out: Path | str) -> dict[str, object]:
    summary = compare_feature_sources(config, trials)
    payload: dict[str, object] = {
        "config_hash": config.config_hash(),
        "trials": trials,
        "sources": {
            s: {
                "mean": v.mean,
                "std": v.std,
                "accuracies": v.accuracies,
                "frame_accuracies": v.frame_accuracies,
            }
            for s, v in summary.items()
        },
    }
    write_json(out, payload)
    return payload


def cmd_size_sweep(config: ExperimentConfig, out: Path | str) -> SizeSweepResult:
    """Run the network-size sweep; write size,mean,min,max,counts rows."""
    sz = config.sizing
    channel = Channel[sz.channel]
    streams = [r.stream for r in load_recordings(config, "train")]
    result = size_sweep(
        streams,
        sz.sizes,
        config.feast.params_for(channel, config.surface.roi_w),
        config.surface,
        target_range=(sz.target_min, sz.target_max),
        trials_per_size=sz.trials,
        seed=config.feast.seed,
        criterion=NoiseCriterion(center_energy_frac=sz.center_energy_frac),
        channel=channel,
        max_workers=sz.max_workers,
    )
    header = {
        "config_hash": config.config_hash(),
        "chosen_size": result.chosen_size,
        "flag": result.flag.value if result.flag else "none",
    }
    rows = (
        (row.size, row.mean, row.min, row.max, " ".join(str(c) for c in row.counts))
        for row in result.rows
    )
    write_csv(out, header, ("size", "mean", "min", "max", "counts"), rows)
    return result


class GiniStudyRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    config_hash: str
    gini: Optional[float]
    accuracy: float
    tau_us: float
    n_features: int
    roi_w: int
    eta: float
    delta_inc: float
    delta_dec: float
    train_fraction: float


class GiniStudyResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: list[GiniStudyRow]
    spearman: Optional[float]


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def random_study_config(
    config: ExperimentConfig, rng: np.random.Generator
) -> tuple[ExperimentConfig, float]:
    """One randomly parameterized feature-set config and its training fraction."""
    g = config.gini_study
    overrides = {
        "surface.tau_us": repr(float(rng.uniform(g.tau_min_us, g.tau_max_us))),
        "surface.roi_w": str(int(rng.choice(g.roi_choices))),
        "feast.n_features": str(int(rng.integers(g.n_features_min, g.n_features_max + 1))),
        "feast.n_features_off": "none",
        "feast.eta": repr(_log_uniform(rng, g.eta_min, g.eta_max)),
        "feast.delta_inc": repr(_log_uniform(rng, g.delta_min, g.delta_max)),
        "feast.delta_dec": repr(_log_uniform(rng, g.delta_min, g.delta_max)),
        "feast.seed": str(int(rng.integers(2**31 - 1))),
    }
    fraction = float(rng.uniform(g.train_fraction_min, g.train_fraction_max))
    return config.with_overrides(overrides=overrides), fraction


def cmd_gini_study(
    config: ExperimentConfig, n_configs: int, seed: int, out: Path | str
) -> GiniStudyResult:
    """
    Train and evaluate `n_configs` randomly parameterized feature sets and
    record (config hash, inference Gini, recording accuracy) per set.
    """
    if n_configs < 1:
        raise ParameterError("n_configs must be >= 1", "n_configs", n_configs)
    rng = np.random.default_rng(seed)
    train = load_recordings(config, "train")
    test = load_recordings(config, "test")
    rows: list[GiniStudyRow] = []
    for i in range(n_configs):
        study_config, fraction = random_study_config(config, rng)
        subset = train[: max(1, int(round(fraction * len(train))))]
        model = train_features(study_config, subset).model
        outcome, gini_value = evaluate_model(study_config, model, study_config.surface, train, test)
        rows.append(
            GiniStudyRow(
                config_hash=study_config.config_hash(),
                gini=gini_value,
                accuracy=outcome.recording.accuracy,
                tau_us=study_config.surface.tau_us,
                n_features=study_config.feast.n_features,
                roi_w=study_config.surface.roi_w,
                eta=study_config.feast.eta,
                delta_inc=study_config.feast.delta_inc,
                delta_dec=study_config.feast.delta_dec,
                train_fraction=fraction,
            )
        )
        logger.info(
            f"Config {i + 1}/{n_configs}: gini={gini_value} accuracy={rows[-1].accuracy:.4f}"
        )

    scored = [r for r in rows if r.gini is not None]
    rho: Optional[float] = None
    if len(scored) >= 2:
        rho = spearman([r.gini for r in scored], [r.accuracy for r in scored])  # type: ignore[misc]
        rho = None if np.isnan(rho) else rho
    columns = tuple(GiniStudyRow.model_fields)
    write_csv(
        out,
        {"config_hash": config.config_hash(), "seed": seed, "n_configs": n_configs},
        columns,
        ([getattr(r, c) if getattr(r, c) is not None else "" for c in columns] for r in rows),
    )
    logger.info(f"✅ Gini study done: spearman={rho}")
    return GiniStudyResult(rows=rows, spearman=rho)


class MonitorReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    channel: Optional[str]
    period: int
    n_samples: int
    converged_at: Optional[int]
    final_missed_rate: Optional[float]


def monitor_report(
    log_path: Path | str, window_k: int = 50, epsilon_rel: float = 0.1, smooth: int = 1
) -> MonitorReport:
    log, header = read_monitor_csv(log_path)
    return MonitorReport(
        channel=header.get("channel"),
        period=log.period,
        n_samples=len(log),
        converged_at=detect_convergence(log, window_k, epsilon_rel, smooth),
        final_missed_rate=log.samples[-1].missed_rate if log.samples else None,
    )


def dump_surface(
    config: ExperimentConfig, n_events: int, channel: Channel, out: Path | str
) -> Path:
    """Full-frame surface of the first training recording after `n_events` events."""
    recording = load_recordings(config, "train")[0]
    stream = recording.stream
    if n_events < 1 or n_events > len(stream):
        raise ParameterError(
            f"n_events must lie in [1, {len(stream)}]", "n_events", n_events
        )
    state = SurfaceState(stream.width, stream.height)
    for x, y, t, p in zip(
        stream.x[:n_events].tolist(),
        stream.y[:n_events].tolist(),
        stream.t[:n_events].tolist(),
        stream.p[:n_events].tolist(),
    ):
        write_event(state, x, y, t, Channel.of(p))
    t_now = int(stream.t[n_events - 1])
    frame = sample_frame(state, channel, t_now, config.surface.tau_us, config.surface.kernel)
    header = {"config_hash": config.config_hash(), "channel": channel.name, "t": t_now}
    return write_csv(out, header, [f"x{i}" for i in range(stream.width)], frame.tolist())


def dump_features(features_path: Path | str, out_dir: Path | str) -> list[Path]:
    """One roi_w x roi_w CSV grid per feature: feature_<CH>_<index>.csv."""
    file = load_features(features_path)
    out_dir = Path(out_dir)
    paths = []
    for record in file.channels:
        w = record.roi_w
        for i, weights in enumerate(record.weights):
            grid = np.asarray(weights).reshape(w, w)
            header = {"config_hash": file.config_hash, "channel": record.channel, "feature": i}
            paths.append(
                write_csv(
                    out_dir / f"feature_{record.channel}_{i:03d}.csv",
                    header,
                    [f"x{k}" for k in range(w)],
                    grid.tolist(),
                )
            )
    return paths


def render_sweep(result: SizeSweepResult) -> str:
    """Human-readable sweep table."""
    rows = ((r.size, r.mean, r.min, r.max) for r in result.rows)
    return render_csv(
        {"chosen_size": result.chosen_size, "flag": result.flag.value if result.flag else "none"},
        ("size", "mean", "min", "max"),
        rows,
    )
