"""
Noise features and network size selection.

Uncorrelated sensor noise produces descriptors with a single hot center
pixel, so networks trained on noisy data learn "noise features" whose weight
energy sits almost entirely at the center. A network with no noise feature
has too few features to spare one for noise; one made mostly of noise
features has more than the data can use. The sweep picks the smallest size
whose trained networks hold a target number of noise features.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from feast_events.errors import ParameterError, ShapeMismatchError
from feast_events.events import EventStream
from feast_events.feast import (
    FeastModel,
    FeastNetwork,
    FeastParams,
    init_network,
    train_recordings,
)
from feast_events.surface import Channel, SurfaceParams

logger = logging.getLogger(__name__)


class NoiseCriterion(BaseModel):
    """Center-energy test for noise features."""

    model_config = ConfigDict(frozen=True)

    center_energy_frac: float = Field(
        default=0.8,
        gt=0,
        lt=1,
        description="Minimum fraction of squared weight mass at the center pixel",
    )


def is_noise_feature(
    weights: np.ndarray,
    roi_w: int,
    criterion: NoiseCriterion = NoiseCriterion(),
) -> bool:
    """
    True iff the center weight carries at least `center_energy_frac` of the
    (unit) squared weight mass.

    Raises:
        ShapeMismatchError: If len(weights) != roi_w ** 2
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != roi_w * roi_w:
        raise ShapeMismatchError(
            "Weight vector length does not match the ROI", expected=roi_w * roi_w, got=w.size
        )
    center = w[(roi_w * roi_w) // 2]
    return bool(center * center >= criterion.center_energy_frac)


def count_noise_features(
    network: FeastNetwork,
    criterion: NoiseCriterion = NoiseCriterion(),
) -> int:
    center = (network.roi_w * network.roi_w) // 2
    energy = network.weights[:, center] ** 2
    return int(np.count_nonzero(energy >= criterion.center_energy_frac))


# ============================================================================
# Sweep
# ============================================================================


class SweepFlag(str, Enum):
    """Why no candidate hit the target range."""

    UNDERSIZED = "undersized"  # too few noise features even at the largest size
    OVERSIZED = "oversized"  # too many noise features even at the smallest size


class SizeSweepRow(BaseModel):
    """Noise-feature counts of the trials at one size."""

    model_config = ConfigDict(frozen=True)

    size: int
    counts: list[int]

    @property
    def mean(self) -> float:
        return float(np.mean(self.counts))

    @property
    def min(self) -> int:
        return min(self.counts)

    @property
    def max(self) -> int:
        return max(self.counts)


class SizeSweepResult(BaseModel):
    """Chosen size and the per-size noise counts behind it."""

    model_config = ConfigDict(frozen=True)

    chosen_size: int
    flag: Optional[SweepFlag] = None
    target_range: tuple[float, float]
    rows: list[SizeSweepRow]


def _trial_seeds(seed: int, sizes: Sequence[int], trials: int) -> list[list[int]]:
    root = np.random.SeedSequence(seed)
    per_size = root.spawn(len(sizes))
    return [[int(s.generate_state(1)[0]) for s in child.spawn(trials)] for child in per_size]


def _train_and_count(
    streams: Sequence[EventStream],
    params: FeastParams,
    surface: SurfaceParams,
    channel: Channel,
    criterion: NoiseCriterion,
    seed: int,
) -> int:
    network = init_network(params, seed, channel)
    train_recordings(FeastModel.single(network), streams, surface)
    return count_noise_features(network, criterion)


def choose_size(
    rows: Sequence[SizeSweepRow], target_range: tuple[float, float]
) -> tuple[int, Optional[SweepFlag]]:
    """
    Smallest size whose mean count lies in the target range; otherwise the
    size nearest the range (largest when below it, smallest when above it),
    flagged.
    """
    lo, hi = target_range
    for row in sorted(rows, key=lambda r: r.size):
        if lo <= row.mean <= hi:
            return row.size, None

    def key(row: SizeSweepRow) -> tuple[float, int]:
        if row.mean < lo:
            return (lo - row.mean, -row.size)
        return (row.mean - hi, row.size)

    best = min(rows, key=key)
    return best.size, SweepFlag.UNDERSIZED if best.mean < lo else SweepFlag.OVERSIZED


def size_sweep(
    streams: EventStream | Sequence[EventStream],
    candidate_sizes: Sequence[int],
    params: FeastParams,
    surface: SurfaceParams,
    target_range: tuple[float, float] = (2, 4),
    trials_per_size: int = 5,
    seed: int = 0,
    criterion: NoiseCriterion = NoiseCriterion(),
    channel: Channel = Channel.ON,
    max_workers: int = 1,
) -> SizeSweepResult:
    """
    Train `trials_per_size` networks per candidate size and pick a size by
    the mean noise-feature count.

    Args:
        streams: Training recording(s)
        candidate_sizes: Ascending network sizes
        params: Template parameters (n_features is replaced per size)
        surface: Surface parameters
        target_range: Inclusive (min, max) mean noise-feature count
        trials_per_size: Independent seeds per size
        seed: Root seed
        criterion: Noise-feature test
        channel: Polarity channel to train
        max_workers: Process pool size (1 = in-process)
    """
    if not candidate_sizes:
        raise ParameterError("At least one candidate size is required", "candidate_sizes")
    if list(candidate_sizes) != sorted(candidate_sizes):
        raise ParameterError(
            "Candidate sizes must be ascending", "candidate_sizes", list(candidate_sizes)
        )
    if trials_per_size < 1:
        raise ParameterError("trials_per_size must be >= 1", "trials_per_size", trials_per_size)

    if isinstance(streams, EventStream):
        streams = [streams]
    seeds = _trial_seeds(seed, candidate_sizes, trials_per_size)
    jobs = [
        (streams, params.model_copy(update={"n_features": size}), surface, channel, criterion, s)
        for size, size_seeds in zip(candidate_sizes, seeds)
        for s in size_seeds
    ]

    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            counts = list(pool.map(_train_and_count, *zip(*jobs)))
    else:
        counts = [_train_and_count(*job) for job in jobs]

    rows = [
        SizeSweepRow(
            size=size,
            counts=counts[i * trials_per_size : (i + 1) * trials_per_size],
        )
        for i, size in enumerate(candidate_sizes)
    ]
    for row in rows:
        logger.info(
            f"Size {row.size}: noise features mean={row.mean:.2f} min={row.min} max={row.max}"
        )

    chosen, flag = choose_size(rows, target_range)
    if flag:
        logger.warning(
            f"No size reached the target range {target_range}; chose {chosen} ({flag.value})"
        )
    else:
        logger.info(f"✅ Chose network size {chosen}")
    return SizeSweepResult(
        chosen_size=chosen,
        flag=flag,
        target_range=(float(target_range[0]), float(target_range[1])),
        rows=rows,
    )
