"""
Classifier inputs and classifiers.

Feature events become classifier inputs in two ways: tumbling-window counts
pooled over the whole field of view, or a feature x time-bin count matrix.
Two readouts consume them: a one-vs-all ridge regression and an Extreme
Learning Machine whose linear output layer is trained by recursive least
squares (an online pseudo-inverse update).
"""

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg, special

from feast_events.errors import (
    LabelRangeError,
    NonFiniteInputError,
    ParameterError,
    ShapeMismatchError,
    UndefinedInputError,
)
from feast_events.events import EventStream
from feast_events.feast import FeatureEvent, FeatureEventStream

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-3
NMNIST_TIME_BINS = 316

FeatureEvents = Union[FeatureEventStream, Sequence[FeatureEvent]]


# ============================================================================
# Inputs
# ============================================================================


class PooledVector(BaseModel):
    """Per-feature event counts in one window."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    counts: np.ndarray = Field(..., description="Non-negative counts, ON || OFF features")
    label: Optional[int] = Field(default=None, description="Class id of the recording")
    recording_id: str = ""
    window_id: int = Field(default=0, ge=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


class TimeBinMatrix(BaseModel):
    """Feature x time-bin event counts of one recording."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    counts: np.ndarray = Field(..., description="(n_features, n_bins) counts")
    bin_ms: float = Field(..., gt=0)

    @property
    def n_features(self) -> int:
        return int(self.counts.shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.counts.shape[1])

    def vector(self) -> np.ndarray:
        """Feature-major flattening: all bins of feature 0, then feature 1, ..."""
        return self.counts.reshape(-1)


def _indices(
    events: FeatureEvents, n_features: Optional[int]
) -> tuple[np.ndarray, np.ndarray, int]:
    """(global feature index, t, feature-space size) of feature events."""
    if isinstance(events, FeatureEventStream):
        dim = events.total_features if n_features is None else n_features
        return events.global_index(), events.t, dim
    # plain sequences are treated as a single channel
    feature = np.fromiter((e.feature for e in events), dtype=np.int64, count=len(events))
    t = np.fromiter((e.t for e in events), dtype=np.int64, count=len(events))
    if n_features is None:
        n_features = int(feature.max()) + 1 if feature.size else 0
    return feature, t, n_features


def _window_counts(
    feature: np.ndarray, t: np.ndarray, dim: int, width: float, n_windows: int
) -> np.ndarray:
    if feature.size and int(feature.max()) >= dim:
        raise ShapeMismatchError(
            "Feature index exceeds the feature space", expected=dim, got=int(feature.max()) + 1
        )
    slot = np.minimum(t // width, n_windows - 1).astype(np.int64)
    flat = np.bincount(slot * dim + feature, minlength=n_windows * dim)
    return flat.reshape(n_windows, dim)


def _n_windows(t: np.ndarray, window_us: int, duration_us: Optional[int]) -> int:
    if window_us <= 0:
        raise ParameterError("window_us must be positive", "window_us", window_us)
    if duration_us is None:
        duration_us = int(t[-1]) + 1 if t.size else 0
    return max(1, math.ceil(duration_us / window_us))


def pool_counts(
    events: FeatureEvents,
    window_us: int,
    duration_us: Optional[int] = None,
    n_features: Optional[int] = None,
) -> np.ndarray:
    """
    Tumbling-window counts as an (n_windows, n_features) matrix.

    Window k covers [k * window_us, (k + 1) * window_us). There are
    ceil(duration_us / window_us) windows, at least one; `duration_us`
    defaults to the last timestamp + 1 and later events land in the last
    window.
    """
    feature, t, dim = _indices(events, n_features)
    return _window_counts(feature, t, dim, window_us, _n_windows(t, window_us, duration_us))


def pool_window(
    events: FeatureEvents,
    window_us: int,
    duration_us: Optional[int] = None,
    n_features: Optional[int] = None,
    label: Optional[int] = None,
    recording_id: str = "",
) -> list[PooledVector]:
    """Tumbling-window pooled vectors; empty windows are emitted with zero counts."""
    counts = pool_counts(events, window_us, duration_us, n_features)
    return [
        PooledVector(counts=row, label=label, recording_id=recording_id, window_id=i)
        for i, row in enumerate(counts)
    ]


def pool_raw_events(
    stream: EventStream,
    window_us: int,
    duration_us: Optional[int] = None,
) -> np.ndarray:
    """
    The same pooling applied to raw pixel events: one input per (polarity,
    pixel), ON pixels first. Returns (n_windows, 2 * width * height).
    """
    plane = stream.width * stream.height
    pixel = stream.y.astype(np.int64) * stream.width + stream.x
    feature = np.where(stream.p > 0, pixel, pixel + plane)
    t = stream.t
    return _window_counts(feature, t, 2 * plane, window_us, _n_windows(t, window_us, duration_us))


def time_bin_matrix(
    events: FeatureEvents,
    n_features: Optional[int] = None,
    bin_ms: float = 1.0,
    n_bins: int = NMNIST_TIME_BINS,
) -> TimeBinMatrix:
    """
    Count of each feature's events per time bin.

    Events past the last bin are counted in bin n_bins - 1.
    """
    if bin_ms <= 0:
        raise ParameterError("bin_ms must be positive", "bin_ms", bin_ms)
    if n_bins < 1:
        raise ParameterError("n_bins must be >= 1", "n_bins", n_bins)
    feature, t, dim = _indices(events, n_features)
    counts = _window_counts(feature, t, dim, bin_ms * 1000.0, n_bins)
    return TimeBinMatrix(counts=np.ascontiguousarray(counts.T), bin_ms=bin_ms)


# ============================================================================
# Shared checks
# ============================================================================


def _as_matrix(X: np.ndarray, dim: Optional[int] = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ShapeMismatchError("Inputs must be a vector or a matrix", expected=2, got=X.ndim)
    if dim is not None and X.shape[1] != dim:
        raise ShapeMismatchError("Input dimension mismatch", expected=dim, got=X.shape[1])
    if not np.all(np.isfinite(X)):
        raise NonFiniteInputError()
    return X


def _as_labels(y: Sequence[int] | np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(y, dtype=np.int64).reshape(-1)
    bad = np.flatnonzero((labels < 0) | (labels >= n_classes))
    if bad.size:
        raise LabelRangeError(
            f"Label {int(labels[bad[0]])} outside [0, {n_classes})",
            label=int(labels[bad[0]]),
            n_classes=n_classes,
        )
    return labels


def _signed_targets(labels: np.ndarray, n_classes: int) -> np.ndarray:
    T = -np.ones((labels.size, n_classes), dtype=np.float64)
    T[np.arange(labels.size), labels] = 1.0
    return T


# ============================================================================
# Linear readout
# ============================================================================


class LinearModel(BaseModel):
    """One-vs-all ridge regression; the last weight row is the bias."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: np.ndarray = Field(..., description="(input_dim + 1, n_classes)")
    ridge: float = Field(default=DEFAULT_RIDGE, gt=0)

    @property
    def input_dim(self) -> int:
        return int(self.weights.shape[0]) - 1

    @property
    def n_classes(self) -> int:
        return int(self.weights.shape[1])


def _with_bias(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1), dtype=np.float64)])


def linear_train(
    X: np.ndarray,
    y: Sequence[int] | np.ndarray,
    ridge: float = DEFAULT_RIDGE,
    n_classes: Optional[int] = None,
) -> LinearModel:
    """
    Regularized least squares against +-1 one-vs-all targets.

    Solves the primal normal equations when samples outnumber inputs and the
    dual (kernel) form otherwise.

    Raises:
        ParameterError: If a class has no samples or ridge <= 0
    """
    if ridge <= 0:
        raise ParameterError("ridge must be positive", "ridge", ridge)
    X = _as_matrix(X)
    labels = np.asarray(y, dtype=np.int64).reshape(-1)
    if labels.size != X.shape[0]:
        raise ShapeMismatchError("One label per sample", expected=X.shape[0], got=labels.size)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    labels = _as_labels(labels, n_classes)
    missing = np.flatnonzero(np.bincount(labels, minlength=n_classes) == 0)
    if missing.size:
        raise ParameterError(
            "Every class needs at least one sample", "y", [int(c) for c in missing]
        )

    A = _with_bias(X)
    T = _signed_targets(labels, n_classes)
    n, d = A.shape
    if d <= n:
        W = linalg.solve(A.T @ A + ridge * np.eye(d), A.T @ T, assume_a="pos")
    else:
        W = A.T @ linalg.solve(A @ A.T + ridge * np.eye(n), T, assume_a="pos")
    return LinearModel(weights=W, ridge=ridge)


def linear_scores(model: LinearModel, X: np.ndarray) -> np.ndarray:
    return _with_bias(_as_matrix(X, model.input_dim)) @ model.weights


def linear_predict_batch(model: LinearModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(linear_scores(model, X), axis=1)


def linear_predict(model: LinearModel, x: np.ndarray) -> int:
    return int(linear_predict_batch(model, x)[0])


# ============================================================================
# Extreme Learning Machine
# ============================================================================


class ELMModel(BaseModel):
    """
    Random sigmoid hidden layer with a linear output layer.

    The input weights and hidden bias are drawn once from `seed` and never
    change. `inverse_corr` is the recursive-least-squares state; after any
    sequence of updates the output weights equal the ridge solution
    (H^T H + ridge I)^-1 H^T T on the samples seen.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    seed: int
    ridge: float = Field(default=DEFAULT_RIDGE, gt=0)
    input_weights: np.ndarray = Field(..., description="(input_dim, hidden), frozen")
    hidden_bias: np.ndarray = Field(..., description="(hidden,), frozen")
    output_weights: np.ndarray = Field(..., description="(hidden, n_classes)")
    inverse_corr: np.ndarray = Field(..., description="(hidden, hidden)")
    n_updates: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ELMModel":
        hidden = self.input_weights.shape[1]
        if self.hidden_bias.shape != (hidden,):
            raise ValueError(f"hidden_bias must have shape ({hidden},)")
        if self.output_weights.shape[0] != hidden:
            raise ValueError(f"output_weights must have {hidden} rows")
        if self.inverse_corr.shape != (hidden, hidden):
            raise ValueError(f"inverse_corr must have shape ({hidden}, {hidden})")
        return self

    @property
    def input_dim(self) -> int:
        return int(self.input_weights.shape[0])

    @property
    def hidden(self) -> int:
        return int(self.input_weights.shape[1])

    @property
    def n_classes(self) -> int:
        return int(self.output_weights.shape[1])


def elm_random_layer(input_dim: int, hidden: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Input weights and hidden bias, uniform on [-1, 1]; deterministic per seed."""
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1.0, 1.0, size=(input_dim, hidden))
    b = rng.uniform(-1.0, 1.0, size=hidden)
    return W, b


def elm_init(
    input_dim: int,
    hidden: int,
    n_classes: int,
    seed: int,
    ridge: float = DEFAULT_RIDGE,
) -> ELMModel:
    if input_dim < 1:
        raise ParameterError("input_dim must be >= 1", "input_dim", input_dim)
    if hidden < 1:
        raise ParameterError("hidden must be >= 1", "hidden", hidden)
    if n_classes < 1:
        raise ParameterError("n_classes must be >= 1", "n_classes", n_classes)
    if ridge <= 0:
        raise ParameterError("ridge must be positive", "ridge", ridge)
    W, b = elm_random_layer(input_dim, hidden, seed)
    return ELMModel(
        seed=seed,
        ridge=ridge,
        input_weights=W,
        hidden_bias=b,
        output_weights=np.zeros((hidden, n_classes), dtype=np.float64),
        inverse_corr=np.eye(hidden, dtype=np.float64) / ridge,
    )


def elm_hidden(model: ELMModel, X: np.ndarray) -> np.ndarray:
    """Hidden activations sigmoid(X W + b), one row per sample."""
    X = _as_matrix(X, model.input_dim)
    return special.expit(X @ model.input_weights + model.hidden_bias)


def elm_update(model: ELMModel, x: np.ndarray, y: int) -> ELMModel:
    """One rank-1 recursive-least-squares update, in place."""
    h = elm_hidden(model, x)[0]
    t = _signed_targets(_as_labels([y], model.n_classes), model.n_classes)[0]
    P = model.inverse_corr
    Ph = P @ h
    gain = Ph / (1.0 + h @ Ph)
    model.output_weights += np.outer(gain, t - h @ model.output_weights)
    P -= np.outer(gain, Ph)
    model.n_updates += 1
    return model


def elm_update_batch(model: ELMModel, X: np.ndarray, y: Sequence[int] | np.ndarray) -> ELMModel:
    """Block update equivalent to sequential elm_update calls over the rows of X."""
    H = elm_hidden(model, X)
    labels = _as_labels(y, model.n_classes)
    if labels.size != H.shape[0]:
        raise ShapeMismatchError("One label per sample", expected=H.shape[0], got=labels.size)
    T = _signed_targets(labels, model.n_classes)
    P = model.inverse_corr
    HP = H @ P
    S = np.eye(H.shape[0]) + HP @ H.T
    gain_t = linalg.solve(S, HP, assume_a="pos")  # K^T = S^-1 H P
    model.output_weights += gain_t.T @ (T - H @ model.output_weights)
    P -= HP.T @ gain_t
    model.n_updates += int(labels.size)
    return model


def elm_scores(model: ELMModel, X: np.ndarray) -> np.ndarray:
    scores = elm_hidden(model, X) @ model.output_weights
    if not np.all(np.isfinite(scores)):
        raise NonFiniteInputError("ELM output is not finite")
    return scores


def elm_predict_batch(model: ELMModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(elm_scores(model, X), axis=1)


def elm_predict(model: ELMModel, x: np.ndarray) -> int:
    return int(elm_predict_batch(model, x)[0])


def elm_ridge_oracle(model: ELMModel, X: np.ndarray, y: Sequence[int] | np.ndarray) -> np.ndarray:
    """Closed-form ridge output weights for the model's hidden layer."""
    H = elm_hidden(model, X)
    T = _signed_targets(_as_labels(y, model.n_classes), model.n_classes)
    return linalg.solve(H.T @ H + model.ridge * np.eye(model.hidden), H.T @ T, assume_a="pos")


# ============================================================================
# Voting & metrics
# ============================================================================


def majority_vote(predictions: Sequence[int] | np.ndarray) -> int:
    """Modal class of a recording's window predictions; ties go to the lowest id."""
    preds = np.asarray(predictions, dtype=np.int64).reshape(-1)
    if preds.size == 0:
        raise UndefinedInputError("Majority vote needs at least one window")
    if np.any(preds < 0):
        raise LabelRangeError("Predictions must be non-negative", label=int(preds.min()))
    return int(np.argmax(np.bincount(preds)))


class EvaluationReport(BaseModel):
    """Accuracy, confusion (rows actual, columns predicted) and per-class rates."""

    model_config = ConfigDict(frozen=True)

    n_samples: int
    accuracy: float
    confusion: list[list[int]]
    precision: list[float]
    recall: list[float]


def evaluate(
    predictions: Sequence[int] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    n_classes: int,
) -> EvaluationReport:
    """
    Standard metrics. Precision of a never-predicted class and recall of an
    absent class are reported as 0.

    Raises:
        ShapeMismatchError: If lengths differ
        LabelRangeError: If a label or prediction is outside [0, n_classes)
        UndefinedInputError: If there are no samples
    """
    preds = np.asarray(predictions, dtype=np.int64).reshape(-1)
    actual = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.size != actual.size:
        raise ShapeMismatchError(
            "Predictions and labels must have equal length", expected=actual.size, got=preds.size
        )
    if preds.size == 0:
        raise UndefinedInputError("Cannot evaluate zero samples")
    _as_labels(actual, n_classes)
    _as_labels(preds, n_classes)

    confusion = np.bincount(actual * n_classes + preds, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )
    hits = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0)
    actual_n = confusion.sum(axis=1)
    precision = np.divide(hits, predicted, out=np.zeros(n_classes), where=predicted > 0)
    recall = np.divide(hits, actual_n, out=np.zeros(n_classes), where=actual_n > 0)
    return EvaluationReport(
        n_samples=int(preds.size),
        accuracy=float(hits.sum() / preds.size),
        confusion=confusion.tolist(),
        precision=precision.tolist(),
        recall=recall.tolist(),
    )
