"""
Convergence signals and feature-activation inequality.

During training a recorder samples four signals every `period` input events:
the change in weights and thresholds since the previous sample, the missed
event rate, and the spread of per-feature win counts. The Gini coefficient of
feature event counts measures how evenly a feature set is used.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from feast_events.errors import ParameterError, ShapeMismatchError, UndefinedInputError

if TYPE_CHECKING:
    from feast_events.feast import FeastNetwork

logger = logging.getLogger(__name__)

# above this population size gini() switches to the sorted closed form
PAIRWISE_GINI_LIMIT = 4096


class MonitorSample(BaseModel):
    """One snapshot of the convergence signals."""

    model_config = ConfigDict(frozen=True)

    event_index: int = Field(..., ge=0, description="Input events seen when sampled")
    d_weights: float = Field(..., ge=0, description="Frobenius norm of the weight change")
    d_thresholds: float = Field(..., ge=0, description="L2 norm of the threshold change")
    missed_rate: float = Field(..., ge=0, le=1, description="Misses per input event")
    spike_rate_std: float = Field(..., ge=0, description="Std of per-feature window wins")


class MonitorLog(BaseModel):
    """Samples taken every `period` events."""

    period: int = Field(..., ge=1, description="Sampling period in input events")
    samples: list[MonitorSample] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_spacing(self) -> "MonitorLog":
        for prev, cur in zip(self.samples, self.samples[1:]):
            if cur.event_index - prev.event_index != self.period:
                raise ValueError(
                    f"samples must be spaced by the period {self.period}: "
                    f"{prev.event_index} -> {cur.event_index}"
                )
        return self

    def __len__(self) -> int:
        return len(self.samples)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples], dtype=np.float64)


class NetworkSnapshot(BaseModel):
    """Copy of the adaptive state of a network."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: np.ndarray
    thresholds: np.ndarray

    @classmethod
    def of(cls, network: "FeastNetwork") -> "NetworkSnapshot":
        return cls(weights=network.weights.copy(), thresholds=network.thresholds.copy())


def sample_signals(
    prev: NetworkSnapshot,
    network: "FeastNetwork",
    window_wins: np.ndarray,
    window_misses: int,
    window_events: int,
    event_index: int = 0,
) -> MonitorSample:
    """
    Compute one monitor sample.

    Args:
        prev: Snapshot taken at the previous sample
        network: Current network
        window_wins: Per-feature wins since the previous sample
        window_misses: Misses since the previous sample
        window_events: Input events since the previous sample
        event_index: Input events seen so far

    Raises:
        ShapeMismatchError: If the snapshot does not match the network shape
    """
    if prev.weights.shape != network.weights.shape:
        raise ShapeMismatchError(
            "Snapshot weights do not match network",
            expected=list(network.weights.shape),
            got=list(prev.weights.shape),
        )
    if prev.thresholds.shape != network.thresholds.shape:
        raise ShapeMismatchError(
            "Snapshot thresholds do not match network",
            expected=list(network.thresholds.shape),
            got=list(prev.thresholds.shape),
        )
    wins = np.asarray(window_wins, dtype=np.float64)
    if wins.shape != (network.n_features,):
        raise ShapeMismatchError(
            "Window win counts do not match network",
            expected=[network.n_features],
            got=list(wins.shape),
        )
    if window_events <= 0:
        raise ParameterError("window_events must be positive", "window_events", window_events)

    return MonitorSample(
        event_index=event_index,
        d_weights=float(np.linalg.norm(network.weights - prev.weights)),
        d_thresholds=float(np.linalg.norm(network.thresholds - prev.thresholds)),
        missed_rate=window_misses / window_events,
        spike_rate_std=float(np.std(wins)),
    )


class MonitorRecorder:
    """Accumulates win/miss counts and samples signals every `period` events."""

    def __init__(self, network: "FeastNetwork", period: int = 100):
        if period < 1:
            raise ParameterError("Monitor period must be >= 1", "period", period)
        self.network = network
        self.period = period
        self.samples: list[MonitorSample] = []
        self._prev = NetworkSnapshot.of(network)
        self._wins = np.zeros(network.n_features, dtype=np.int64)
        self._misses = 0
        self._in_window = 0
        self._seen = 0

    def record(self, index: int) -> None:
        """Count one input event; `index` is the winner or -1 for a miss."""
        self._seen += 1
        self._in_window += 1
        if index >= 0:
            self._wins[index] += 1
        else:
            self._misses += 1
        if self._in_window == self.period:
            self.samples.append(
                sample_signals(
                    self._prev,
                    self.network,
                    self._wins,
                    self._misses,
                    self._in_window,
                    self._seen,
                )
            )
            self._prev = NetworkSnapshot.of(self.network)
            self._wins[:] = 0
            self._misses = 0
            self._in_window = 0

    def log(self) -> MonitorLog:
        return MonitorLog(period=self.period, samples=list(self.samples))


# ============================================================================
# Convergence
# ============================================================================

CONVERGENCE_SIGNALS = ("d_weights", "d_thresholds", "missed_rate")


def detect_convergence(
    log: MonitorLog,
    window_k: int = 50,
    epsilon_rel: float = 0.1,
    smooth: int = 1,
) -> Optional[int]:
    """
    Plateau detector over the weight, threshold and missed-rate signals.

    A window of `window_k` consecutive samples is stable when every sample of
    each signal lies within `epsilon_rel` times the window mean of that
    signal (a signal that is identically zero over the window is stable).

    Args:
        log: Monitor samples
        window_k: Samples per window
        epsilon_rel: Allowed deviation relative to the window mean
        smooth: Trailing moving average length applied to each signal before
            the window test (1 = raw samples)

    Returns:
        event_index of the last sample of the earliest stable window, or
        None if no window is stable
    """
    if window_k < 2:
        raise ParameterError("window_k must be >= 2", "window_k", window_k)
    if epsilon_rel <= 0:
        raise ParameterError("epsilon_rel must be positive", "epsilon_rel", epsilon_rel)
    if smooth < 1:
        raise ParameterError("smooth must be >= 1", "smooth", smooth)
    if len(log) < window_k + smooth - 1:
        return None

    signals = np.stack([log.column(name) for name in CONVERGENCE_SIGNALS], axis=1)
    if smooth > 1:
        signals = sliding_window_view(signals, smooth, axis=0).mean(axis=-1)
    windows = sliding_window_view(signals, window_k, axis=0)  # (n - k + 1, 3, k)
    level = windows.mean(axis=-1)
    spread = np.abs(windows - level[..., None]).max(axis=-1)
    stable = (spread < epsilon_rel * np.abs(level)) | ((spread == 0) & (level == 0))
    hits = np.flatnonzero(stable.all(axis=1))
    if hits.size == 0:
        return None
    return log.samples[int(hits[0]) + window_k + smooth - 2].event_index


# ============================================================================
# Activation inequality
# ============================================================================


def _as_counts(counts: Sequence[float] | np.ndarray) -> np.ndarray:
    x = np.asarray(counts, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise UndefinedInputError("Gini coefficient of an empty population is undefined")
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise ParameterError("Counts must be finite and non-negative", "counts")
    if x.sum() == 0:
        raise UndefinedInputError("Gini coefficient of all-zero counts is undefined")
    return x


def gini(counts: Sequence[float] | np.ndarray) -> float:
    """
    Gini coefficient as the mean absolute pairwise difference over twice the
    mean: sum_i sum_j |x_i - x_j| / (2 n sum x).

    Raises:
        UndefinedInputError: If the population is empty or all counts are zero
    """
    x = _as_counts(counts)
    n = x.size
    if n > PAIRWISE_GINI_LIMIT:
        return gini_sorted(x)
    pairwise = np.abs(x[:, None] - x[None, :]).sum()
    return float(pairwise / (2.0 * n * x.sum()))


def gini_sorted(counts: Sequence[float] | np.ndarray) -> float:
    """Closed form on sorted counts: 2 sum_i i x_(i) / (n sum x) - (n + 1) / n."""
    x = np.sort(_as_counts(counts))
    n = x.size
    index = np.arange(1, n + 1, dtype=np.float64)
    return float(2.0 * np.sum(index * x) / (n * x.sum()) - (n + 1.0) / n)


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation (nan when either input is constant)."""
    if len(a) != len(b):
        raise ShapeMismatchError("Inputs must have equal length", expected=len(a), got=len(b))
    if len(a) < 2:
        raise UndefinedInputError("Rank correlation needs at least two pairs")
    return float(stats.spearmanr(a, b)[0])
