"""
Adaptive selection threshold clustering.

Each feature is a unit-norm weight vector with its own selection threshold,
a maximum cosine distance for accepting a descriptor. During training:

- Win: the nearest feature among those within threshold takes the
  descriptor. Its weights move toward it with mixing rate eta and are
  renormalized, and its threshold contracts by delta_dec.
- Miss: no feature is within threshold. The descriptor is dropped and every
  threshold expands by delta_inc.

Inference ignores thresholds and assigns every event to the nearest feature.
"""

from __future__ import annotations

import logging
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from feast_events.errors import ParameterError, ShapeMismatchError
from feast_events.events import EventStream
from feast_events.monitor import MonitorLog, MonitorRecorder
from feast_events.surface import (
    Channel,
    Descriptor,
    SurfaceParams,
    SurfaceState,
    normalize_window,
    window_values,
    write_event,
)

logger = logging.getLogger(__name__)

MAX_THRESHOLD = 2.0


# ============================================================================
# Parameters & result types
# ============================================================================


class ThresholdInit(str, Enum):
    """Initial selection threshold distribution."""

    UNIFORM = "uniform"  # U[0, 1]
    GAUSSIAN = "gaussian"  # N(value, std) clamped to [0, 2]
    CONSTANT = "constant"  # every threshold = value


class FeastParams(BaseModel):
    """Network size and threshold dynamics."""

    model_config = ConfigDict(frozen=True)

    n_features: int = Field(..., ge=1, description="Number of features per channel")
    delta_inc: float = Field(default=0.003, gt=0, description="Threshold expansion per miss")
    delta_dec: float = Field(default=0.001, gt=0, description="Threshold contraction per win")
    eta: float = Field(default=0.001, gt=0, lt=1, description="Weight mixing rate")
    roi_w: int = Field(default=11, ge=1, le=63, description="ROI side length (odd)")
    threshold_init: ThresholdInit = Field(default=ThresholdInit.UNIFORM)
    threshold_init_value: float = Field(default=0.5, ge=0, le=MAX_THRESHOLD)
    threshold_init_std: float = Field(default=0.1, ge=0)

    @field_validator("roi_w")
    @classmethod
    def _check_odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"roi_w must be odd, got {value}")
        return value

    @property
    def dim(self) -> int:
        return self.roi_w * self.roi_w


class Feature(BaseModel):
    """Read-only view of one feature."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: np.ndarray = Field(..., description="Unit-norm weight vector")
    threshold: float = Field(..., ge=0, le=MAX_THRESHOLD)
    win_count: int = Field(..., ge=0)


class MatchOutcome(str, Enum):
    WIN = "win"
    MISS = "miss"


class MatchResult(BaseModel):
    """Outcome of matching one descriptor."""

    model_config = ConfigDict(frozen=True)

    outcome: MatchOutcome
    feature_index: Optional[int] = None
    distance: Optional[float] = None

    @classmethod
    def win(cls, index: int, distance: float) -> "MatchResult":
        return cls(outcome=MatchOutcome.WIN, feature_index=index, distance=distance)

    @classmethod
    def miss(cls) -> "MatchResult":
        return cls(outcome=MatchOutcome.MISS)

    @property
    def is_win(self) -> bool:
        return self.outcome is MatchOutcome.WIN


class FeatureEvent(BaseModel):
    """Output event of a network: feature index and the input timestamp."""

    model_config = ConfigDict(frozen=True)

    feature: int = Field(..., ge=0)
    t: int = Field(..., ge=0)
    channel: Channel = Channel.ON


class FeatureEventStream(BaseModel):
    """Column-wise feature events of one recording."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    feature: np.ndarray = Field(..., description="Feature index within its channel")
    t: np.ndarray = Field(..., description="Timestamps in microseconds")
    channel: np.ndarray = Field(..., description="Channel index (0 = ON, 1 = OFF)")
    sizes: tuple[int, int] = Field(..., description="Features per channel (ON, OFF)")

    @classmethod
    def from_lists(
        cls, feature: list[int], t: list[int], channel: list[int], sizes: tuple[int, int]
    ) -> "FeatureEventStream":
        return cls(
            feature=np.asarray(feature, dtype=np.int64),
            t=np.asarray(t, dtype=np.int64),
            channel=np.asarray(channel, dtype=np.int8),
            sizes=sizes,
        )

    def __len__(self) -> int:
        return int(len(self.t))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureEventStream):
            return NotImplemented
        return (
            self.sizes == other.sizes
            and np.array_equal(self.feature, other.feature)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.channel, other.channel)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def total_features(self) -> int:
        return self.sizes[0] + self.sizes[1]

    def global_index(self) -> np.ndarray:
        """Feature index in the concatenated ON || OFF feature space."""
        return self.feature + np.where(self.channel == Channel.OFF, self.sizes[0], 0)

    def feature_counts(self) -> np.ndarray:
        return np.bincount(self.global_index(), minlength=self.total_features)

    def events(self) -> list[FeatureEvent]:
        return [
            FeatureEvent(feature=int(f), t=int(t), channel=Channel(int(c)))
            for f, t, c in zip(self.feature, self.t, self.channel)
        ]


# ============================================================================
# Networks
# ============================================================================


class FeastNetwork:
    """
    Features of one polarity channel.

    Weights are stored as an (n_features, roi_w * roi_w) matrix so matching is
    a single matrix-vector product.
    """

    def __init__(
        self,
        params: FeastParams,
        weights: np.ndarray,
        thresholds: np.ndarray,
        win_counts: Optional[np.ndarray] = None,
        channel: Channel = Channel.ON,
    ):
        weights = np.array(weights, dtype=np.float64)
        thresholds = np.array(thresholds, dtype=np.float64)
        if weights.shape != (params.n_features, params.dim):
            raise ShapeMismatchError(
                "Weight matrix does not match parameters",
                expected=[params.n_features, params.dim],
                got=list(weights.shape),
            )
        if thresholds.shape != (params.n_features,):
            raise ShapeMismatchError(
                "Threshold vector does not match parameters",
                expected=[params.n_features],
                got=list(thresholds.shape),
            )
        self.params = params
        self.channel = Channel(channel)
        self.weights = weights
        self.thresholds = thresholds
        self.win_counts = (
            np.zeros(params.n_features, dtype=np.int64)
            if win_counts is None
            else np.array(win_counts, dtype=np.int64)
        )

    @property
    def n_features(self) -> int:
        return self.params.n_features

    @property
    def roi_w(self) -> int:
        return self.params.roi_w

    def feature(self, index: int) -> Feature:
        return Feature(
            weights=self.weights[index].copy(),
            threshold=float(self.thresholds[index]),
            win_count=int(self.win_counts[index]),
        )

    def copy(self) -> "FeastNetwork":
        return FeastNetwork(
            self.params, self.weights, self.thresholds, self.win_counts, self.channel
        )

    def __repr__(self) -> str:
        return (
            f"FeastNetwork(channel={self.channel.name}, n_features={self.n_features}, "
            f"roi_w={self.roi_w})"
        )


def _draw_thresholds(params: FeastParams, rng: np.random.Generator) -> np.ndarray:
    n = params.n_features
    if params.threshold_init is ThresholdInit.UNIFORM:
        return rng.uniform(0.0, 1.0, size=n)
    if params.threshold_init is ThresholdInit.GAUSSIAN:
        drawn = rng.normal(params.threshold_init_value, params.threshold_init_std, size=n)
        return np.clip(drawn, 0.0, MAX_THRESHOLD)
    return np.full(n, params.threshold_init_value, dtype=np.float64)


def init_network(params: FeastParams, seed: int, channel: Channel = Channel.ON) -> FeastNetwork:
    """
    Random network: weights uniform on the unit hypersphere, thresholds per
    `params.threshold_init`. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((params.n_features, params.dim))
    weights /= np.linalg.norm(weights, axis=1, keepdims=True)
    thresholds = _draw_thresholds(params, rng)
    return FeastNetwork(params, weights, thresholds, channel=channel)


class FeastModel:
    """Per-polarity networks trained independently (ON and optionally OFF)."""

    def __init__(self, networks: dict[Channel, FeastNetwork]):
        if not networks:
            raise ParameterError("A model needs at least one channel network", "networks")
        roi = {net.roi_w for net in networks.values()}
        if len(roi) != 1:
            raise ParameterError("All channel networks must share roi_w", "roi_w", sorted(roi))
        self.networks = {Channel(ch): net for ch, net in sorted(networks.items())}
        for ch, net in self.networks.items():
            net.channel = ch

    @classmethod
    def single(cls, network: FeastNetwork) -> "FeastModel":
        return cls({network.channel: network})

    @property
    def roi_w(self) -> int:
        return next(iter(self.networks.values())).roi_w

    @property
    def sizes(self) -> tuple[int, int]:
        on = self.networks.get(Channel.ON)
        off = self.networks.get(Channel.OFF)
        return (on.n_features if on else 0, off.n_features if off else 0)

    def copy(self) -> "FeastModel":
        return FeastModel({ch: net.copy() for ch, net in self.networks.items()})

    def random_like(self, seed: int) -> "FeastModel":
        """Untrained model with the same sizes and initial distributions."""
        return init_model(
            {ch: net.params for ch, net in self.networks.items()},
            seed,
        )


def init_model(params: dict[Channel, FeastParams], seed: int) -> FeastModel:
    """One freshly initialized network per channel, with independent child seeds."""
    children = np.random.SeedSequence(seed).spawn(2)
    networks = {}
    for ch, p in params.items():
        child_seed = int(children[int(ch)].generate_state(1)[0])
        networks[Channel(ch)] = init_network(p, child_seed, Channel(ch))
    return FeastModel(networks)


# ============================================================================
# Matching & updates
# ============================================================================


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - a.b for unit vectors, clamped to [0, 2]."""
    return float(min(max(1.0 - float(np.dot(a, b)), 0.0), MAX_THRESHOLD))


def _values(descriptor: Union[Descriptor, np.ndarray]) -> np.ndarray:
    return descriptor.values if isinstance(descriptor, Descriptor) else descriptor


def _distances(network: FeastNetwork, d: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - network.weights @ d, 0.0, MAX_THRESHOLD)


def _match_index(network: FeastNetwork, d: np.ndarray) -> tuple[int, float]:
    """Index and distance of the nearest qualifying feature, or (-1, inf)."""
    dist = _distances(network, d)
    masked = np.where(dist <= network.thresholds, dist, np.inf)
    index = int(np.argmin(masked))  # first minimum -> lowest index on ties
    best = float(masked[index])
    if best == np.inf:
        return -1, best
    return index, best


def _apply_win(network: FeastNetwork, index: int, d: np.ndarray) -> None:
    eta = network.params.eta
    w = (1.0 - eta) * network.weights[index] + eta * d
    network.weights[index] = w / np.sqrt(w @ w)
    network.thresholds[index] = max(0.0, network.thresholds[index] - network.params.delta_dec)
    network.win_counts[index] += 1


def _apply_miss(network: FeastNetwork) -> None:
    np.minimum(network.thresholds + network.params.delta_inc, MAX_THRESHOLD, out=network.thresholds)


def match(network: FeastNetwork, descriptor: Union[Descriptor, np.ndarray]) -> MatchResult:
    """
    Nearest feature among those whose threshold admits the descriptor.

    Ties on distance go to the lowest feature index.
    """
    index, dist = _match_index(network, _values(descriptor))
    return MatchResult.miss() if index < 0 else MatchResult.win(index, dist)


def train_step(network: FeastNetwork, descriptor: Union[Descriptor, np.ndarray]) -> MatchResult:
    """Match one descriptor and apply the win or miss update in place."""
    d = _values(descriptor)
    index, dist = _match_index(network, d)
    if index < 0:
        _apply_miss(network)
        return MatchResult.miss()
    _apply_win(network, index, d)
    return MatchResult.win(index, dist)


def infer_step(network: FeastNetwork, descriptor: Descriptor) -> FeatureEvent:
    """Assign the globally nearest feature, thresholds ignored."""
    index = int(np.argmax(network.weights @ descriptor.values))
    return FeatureEvent(feature=index, t=descriptor.source_event.t, channel=network.channel)


# ============================================================================
# Streams
# ============================================================================


class TrainResult(BaseModel):
    """Outputs of a training run."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: FeastModel
    feature_events: FeatureEventStream
    monitor_logs: dict[Channel, MonitorLog]
    n_events: int = Field(0, description="Input events presented to a network")
    n_missed: int = Field(0, description="Input events that missed every feature")

    @property
    def network(self) -> FeastNetwork:
        """The only network of a single-channel run."""
        if len(self.model.networks) != 1:
            raise ParameterError("Run trained more than one channel", "network")
        return next(iter(self.model.networks.values()))

    @property
    def monitor_log(self) -> MonitorLog:
        return self.monitor_logs[self.network.channel]


def _check_roi(model: FeastModel, surface: SurfaceParams) -> None:
    if model.roi_w != surface.roi_w:
        raise ParameterError(
            f"Network roi_w={model.roi_w} does not match surface roi_w={surface.roi_w}",
            "roi_w",
            surface.roi_w,
        )


class FeastTrainer:
    """
    Feeds recordings into per-channel networks.

    Each recording gets a fresh surface; networks and monitor recorders persist
    across recordings so the monitor log covers the whole training run.
    """

    def __init__(
        self,
        model: FeastModel,
        surface: SurfaceParams,
        monitor_period: int = 100,
        missed_replays: int = 0,
    ):
        _check_roi(model, surface)
        if missed_replays < 0:
            raise ParameterError("missed_replays must be >= 0", "missed_replays", missed_replays)
        self.model = model
        self.surface = surface
        self.missed_replays = missed_replays
        self.recorders = {
            ch: MonitorRecorder(net, period=monitor_period)
            for ch, net in model.networks.items()
        }
        self.n_events = 0
        self.n_missed = 0

    def feed(self, stream: EventStream) -> FeatureEventStream:
        """
        Train on one recording in time order.

        Returns:
            Feature events of the wins (misses emit nothing)
        """
        state = SurfaceState(stream.width, stream.height)
        w = self.surface.roi_w
        tau = self.surface.tau_us
        kernel = self.surface.kernel
        networks = self.model.networks
        out_f: list[int] = []
        out_t: list[int] = []
        out_c: list[int] = []
        missed: list[tuple[FeastNetwork, np.ndarray]] = []

        for x, y, t, p in zip(
            stream.x.tolist(), stream.y.tolist(), stream.t.tolist(), stream.p.tolist()
        ):
            ch = 0 if p > 0 else 1
            write_event(state, x, y, t, ch)
            network = networks.get(ch)  # type: ignore[call-overload]
            if network is None:
                continue
            d = normalize_window(window_values(state, x, y, t, ch, w, tau, kernel))
            index, _ = _match_index(network, d)
            self.n_events += 1
            if index >= 0:
                _apply_win(network, index, d)
                out_f.append(index)
                out_t.append(t)
                out_c.append(ch)
            else:
                _apply_miss(network)
                self.n_missed += 1
                if self.missed_replays:
                    missed.append((network, d))
            self.recorders[Channel(ch)].record(index)

        self._replay(missed)
        return FeatureEventStream.from_lists(out_f, out_t, out_c, self.model.sizes)

    def _replay(self, missed: list[tuple[FeastNetwork, np.ndarray]]) -> None:
        for round_ in range(self.missed_replays):
            if not missed:
                break
            still: list[tuple[FeastNetwork, np.ndarray]] = []
            for network, d in missed:
                if not train_step(network, d).is_win:
                    still.append((network, d))
            logger.debug(
                f"Replay round {round_ + 1}: {len(missed) - len(still)} of {len(missed)} "
                "missed descriptors absorbed"
            )
            missed = still

    def monitor_logs(self) -> dict[Channel, MonitorLog]:
        return {ch: rec.log() for ch, rec in self.recorders.items()}


def _as_model(target: Union[FeastModel, FeastNetwork]) -> FeastModel:
    return FeastModel.single(target) if isinstance(target, FeastNetwork) else target


def train_stream(
    target: Union[FeastModel, FeastNetwork],
    stream: EventStream,
    surface: SurfaceParams,
    epochs: int = 1,
    missed_replays: int = 0,
    monitor_period: int = 100,
) -> TrainResult:
    """
    Train in place on one stream.

    Every event updates the surface; events of a channel with a network are
    matched and trained. With several epochs the stream is replayed on a fresh
    surface each time and the returned feature events are those of the last
    epoch.
    """
    if epochs < 1:
        raise ParameterError("epochs must be >= 1", "epochs", epochs)
    model = _as_model(target)
    trainer = FeastTrainer(model, surface, monitor_period, missed_replays)
    feature_events = FeatureEventStream.from_lists([], [], [], model.sizes)
    for _ in range(epochs):
        feature_events = trainer.feed(stream)
    return TrainResult(
        model=model,
        feature_events=feature_events,
        monitor_logs=trainer.monitor_logs(),
        n_events=trainer.n_events,
        n_missed=trainer.n_missed,
    )


def train_recordings(
    model: FeastModel,
    streams: Sequence[EventStream],
    surface: SurfaceParams,
    epochs: int = 1,
    missed_replays: int = 0,
    monitor_period: int = 100,
) -> TrainResult:
    """Train on many recordings in order (fresh surface per recording)."""
    trainer = FeastTrainer(model, surface, monitor_period, missed_replays)
    last = FeatureEventStream.from_lists([], [], [], model.sizes)
    for epoch in range(epochs):
        for i, stream in enumerate(streams):
            last = trainer.feed(stream)
            if (i + 1) % 1000 == 0:
                logger.info(f"Epoch {epoch + 1}: trained on {i + 1}/{len(streams)} recordings")
    miss_pct = 100.0 * trainer.n_missed / max(trainer.n_events, 1)
    logger.info(
        f"✅ Training done: {trainer.n_events} events, {trainer.n_missed} missed ({miss_pct:.2f}%)"
    )
    return TrainResult(
        model=model,
        feature_events=last,
        monitor_logs=trainer.monitor_logs(),
        n_events=trainer.n_events,
        n_missed=trainer.n_missed,
    )


def infer_stream(
    target: Union[FeastModel, FeastNetwork],
    stream: EventStream,
    surface: SurfaceParams,
) -> FeatureEventStream:
    """
    Nearest-feature assignment for every event of a channel with a network.

    Networks are read-only here; when every channel present in the stream
    has a network the output has one feature event per input event.
    """
    model = _as_model(target)
    _check_roi(model, surface)
    state = SurfaceState(stream.width, stream.height)
    w = surface.roi_w
    tau = surface.tau_us
    kernel = surface.kernel
    weights = {int(ch): net.weights for ch, net in model.networks.items()}
    out_f: list[int] = []
    out_t: list[int] = []
    out_c: list[int] = []

    for x, y, t, p in zip(
        stream.x.tolist(), stream.y.tolist(), stream.t.tolist(), stream.p.tolist()
    ):
        ch = 0 if p > 0 else 1
        write_event(state, x, y, t, ch)
        W = weights.get(ch)
        if W is None:
            continue
        d = normalize_window(window_values(state, x, y, t, ch, w, tau, kernel))
        out_f.append(int(np.argmax(W @ d)))
        out_t.append(t)
        out_c.append(ch)

    return FeatureEventStream.from_lists(out_f, out_t, out_c, model.sizes)
