"""
feast-events - event-based feature extraction with adaptive selection thresholds.

Events from a neuromorphic vision sensor are turned into time-surface
descriptors, clustered online by features that each carry their own adaptive
selection threshold, and the resulting feature events are pooled for linear
and Extreme Learning Machine classifiers.

Example:
    >>> from feast_events import SurfaceParams, FeastParams, init_network, train_stream
    >>> from feast_events import synth_noise
    >>> stream = synth_noise(duration_us=100_000, noise_rate_hz_per_pixel=20.0, seed=1)
    >>> network = init_network(FeastParams(n_features=25), seed=0)
    >>> result = train_stream(network, stream, SurfaceParams())
"""

__version__ = "0.1.0"

from feast_events.classify import (
    ELMModel,
    EvaluationReport,
    LinearModel,
    PooledVector,
    TimeBinMatrix,
    elm_init,
    elm_predict,
    elm_update,
    evaluate,
    linear_predict,
    linear_train,
    majority_vote,
    pool_window,
    time_bin_matrix,
)
from feast_events.config import ExperimentConfig
from feast_events.errors import FeastError
from feast_events.events import (
    Event,
    EventStream,
    ShapeKind,
    ShapeSpec,
    decode_nmnist,
    encode_nmnist,
    merge_streams,
    synth_noise,
    synth_pattern_stream,
)
from feast_events.feast import (
    FeastModel,
    FeastNetwork,
    FeastParams,
    FeatureEvent,
    MatchResult,
    cosine_distance,
    infer_step,
    infer_stream,
    init_model,
    init_network,
    match,
    train_step,
    train_stream,
)
from feast_events.monitor import MonitorLog, MonitorSample, detect_convergence, gini, sample_signals
from feast_events.sizing import NoiseCriterion, count_noise_features, is_noise_feature, size_sweep
from feast_events.surface import (
    Channel,
    Descriptor,
    Kernel,
    SurfaceParams,
    SurfaceState,
    extract_descriptor,
    sample_exponential,
    sample_fixed_window,
    surface_update,
)

__all__ = [
    # Events
    "Event",
    "EventStream",
    "ShapeKind",
    "ShapeSpec",
    "decode_nmnist",
    "encode_nmnist",
    "merge_streams",
    "synth_noise",
    "synth_pattern_stream",
    # Surfaces
    "Channel",
    "Descriptor",
    "Kernel",
    "SurfaceParams",
    "SurfaceState",
    "extract_descriptor",
    "sample_exponential",
    "sample_fixed_window",
    "surface_update",
    # Feature extraction
    "FeastModel",
    "FeastNetwork",
    "FeastParams",
    "FeatureEvent",
    "MatchResult",
    "cosine_distance",
    "infer_step",
    "infer_stream",
    "init_model",
    "init_network",
    "match",
    "train_step",
    "train_stream",
    # Monitoring
    "MonitorLog",
    "MonitorSample",
    "detect_convergence",
    "gini",
    "sample_signals",
    # Sizing
    "NoiseCriterion",
    "count_noise_features",
    "is_noise_feature",
    "size_sweep",
    # Classification
    "ELMModel",
    "EvaluationReport",
    "LinearModel",
    "PooledVector",
    "TimeBinMatrix",
    "elm_init",
    "elm_predict",
    "elm_update",
    "evaluate",
    "linear_predict",
    "linear_train",
    "majority_vote",
    "pool_window",
    "time_bin_matrix",
    # Config & errors
    "ExperimentConfig",
    "FeastError",
]
