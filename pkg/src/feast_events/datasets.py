"""
Labelled recordings: N-MNIST directory loader, synthetic datasets and
archive download.
"""

from __future__ import annotations

import logging
import math
import zipfile
from pathlib import Path
from typing import Optional, Sequence
from urllib.parse import urlparse

import httpx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from feast_events.errors import DatasetError, DownloadError, ParameterError
from feast_events.events import (
    EventStream,
    ShapeKind,
    ShapeSpec,
    merge_streams,
    read_nmnist,
    synth_noise,
    synth_pattern_stream,
)
from feast_events.utils.retry import create_retry_decorator

logger = logging.getLogger(__name__)

NMNIST_SPLITS = ("Train", "Test")
DIRECTION_JITTER_DEG = 15.0
POSITION_JITTER_PX = 3.0

__all__ = [
    "Recording",
    "load_nmnist_split",
    "class_shape",
    "synth_dataset",
    "synth_noise",
    "synth_stationary_stream",
    "fetch_archive",
]


class Recording(BaseModel):
    """One labelled event recording."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    stream: EventStream
    label: int = Field(..., ge=0, description="Class id")
    recording_id: str = Field(..., description="Stable identifier, e.g. Train/3/00017")


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


# ============================================================================
# N-MNIST
# ============================================================================


def _balanced_subset(
    files: dict[int, list[Path]], limit: int, seed: int
) -> dict[int, list[Path]]:
    classes = sorted(files)
    rng = np.random.default_rng(seed)
    base, extra = divmod(limit, len(classes))
    chosen: dict[int, list[Path]] = {}
    for i, label in enumerate(classes):
        quota = min(base + (1 if i < extra else 0), len(files[label]))
        picks = np.sort(rng.permutation(len(files[label]))[:quota])
        chosen[label] = [files[label][k] for k in picks]
    return chosen


def load_nmnist_split(
    root: Path | str,
    split: str = "Train",
    limit: Optional[int] = None,
    seed: int = 0,
) -> list[Recording]:
    """
    Read `<root>/<split>/<digit>/*.bin`.

    Files are visited in sorted order so the result is deterministic. With
    `limit`, a class-balanced subsample is drawn with `seed`. Recordings are
    returned interleaved by class (digit 0, 1, ..., 9, 0, 1, ...).

    Raises:
        DatasetError: If the split directory is missing or holds no recordings
    """
    if split not in NMNIST_SPLITS:
        raise ParameterError(f"split must be one of {NMNIST_SPLITS}", "split", split)
    base = Path(root) / split
    if not base.is_dir():
        raise DatasetError("N-MNIST split directory not found", path=str(base))

    files = {
        int(d.name): sorted(d.glob("*.bin"))
        for d in sorted(base.iterdir())
        if d.is_dir() and d.name.isdigit()
    }
    files = {label: paths for label, paths in files.items() if paths}
    if not files:
        raise DatasetError("No .bin recordings found", path=str(base))
    if limit is not None:
        if limit < 1:
            raise ParameterError("limit must be >= 1", "limit", limit)
        files = _balanced_subset(files, limit, seed)

    recordings: list[Recording] = []
    depth = max(len(paths) for paths in files.values())
    for k in range(depth):
        for label in sorted(files):
            if k < len(files[label]):
                path = files[label][k]
                recordings.append(
                    Recording(
                        stream=read_nmnist(path),
                        label=label,
                        recording_id=f"{split}/{label}/{path.stem}",
                    )
                )
    logger.info(f"Loaded {len(recordings)} N-MNIST recordings from {base}")
    return recordings


# ============================================================================
# Synthetic
# ============================================================================

_KINDS = list(ShapeKind)


def class_shape(label: int, n_classes: int, size: int = 7) -> ShapeSpec:
    """Shape kind and base direction of a synthetic class."""
    return ShapeSpec(
        kind=_KINDS[label % len(_KINDS)],
        size=size,
        direction_deg=360.0 * label / n_classes,
    )


def _jittered(
    base: ShapeSpec,
    rng: np.random.Generator,
    velocity_range: tuple[float, float],
    width: int,
    height: int,
) -> ShapeSpec:
    lo, hi = sorted(velocity_range)
    direction = base.direction_deg + rng.uniform(-DIRECTION_JITTER_DEG, DIRECTION_JITTER_DEG)
    theta = math.radians(direction)
    ux, uy = math.cos(theta), math.sin(theta)
    reach = max(width, height) / 2.0 + base.size
    offset = rng.uniform(-POSITION_JITTER_PX, POSITION_JITTER_PX)
    return base.model_copy(
        update={
            "direction_deg": direction,
            "x0": width / 2.0 - ux * reach - uy * offset,
            "y0": height / 2.0 - uy * reach + ux * offset,
            "speed": float(rng.uniform(lo, hi)),
        }
    )


def synth_dataset(
    n_classes: int,
    recordings_per_class: int,
    velocity_range: tuple[float, float] = (1000.0, 4000.0),
    duration_us: int = 100_000,
    noise_rate: float = 0.5,
    seed: int = 0,
    width: int = 32,
    height: int = 32,
    shape_size: int = 7,
    shapes: Optional[Sequence[ShapeSpec]] = None,
) -> list[Recording]:
    """
    Labelled moving-shape recordings.

    Each class is a shape kind travelling in its own base direction; every
    recording varies speed, direction (+-15 degrees) and position. Recordings
    are interleaved by class.

    Args:
        n_classes: Number of classes
        recordings_per_class: Recordings per class
        velocity_range: (min, max) speed in px/s
        duration_us: Length of each recording
        noise_rate: Background activity in Hz per pixel
        seed: Root seed
        width: Sensor width
        height: Sensor height
        shape_size: Template side in pixels
        shapes: One base shape per class, in place of the built-in class shapes
    """
    if n_classes < 1:
        raise ParameterError("n_classes must be >= 1", "n_classes", n_classes)
    if recordings_per_class < 1:
        raise ParameterError(
            "recordings_per_class must be >= 1", "recordings_per_class", recordings_per_class
        )
    if shapes is not None and len(shapes) != n_classes:
        raise ParameterError(
            f"Need one shape per class, got {len(shapes)} for {n_classes} classes",
            "shapes",
            len(shapes),
        )
    bases = (
        list(shapes)
        if shapes is not None
        else [class_shape(label, n_classes, shape_size) for label in range(n_classes)]
    )

    seeds = _child_seeds(seed, n_classes * recordings_per_class)
    recordings: list[Recording] = []
    for i in range(recordings_per_class):
        for label in range(n_classes):
            s = seeds[len(recordings)]
            rng = np.random.default_rng(s)
            spec = _jittered(bases[label], rng, velocity_range, width, height)
            stream = synth_pattern_stream(
                [spec], velocity_range, duration_us, noise_rate, s, width, height
            )
            recordings.append(
                Recording(stream=stream, label=label, recording_id=f"synth/{label}/{i:05d}")
            )
    logger.debug(f"Generated {len(recordings)} synthetic recordings ({n_classes} classes)")
    return recordings


def synth_stationary_stream(
    n_patterns: int,
    n_events_target: int,
    velocity_range: tuple[float, float] = (1000.0, 4000.0),
    segment_us: int = 100_000,
    noise_rate: float = 0.0,
    seed: int = 0,
    width: int = 32,
    height: int = 32,
    shape_size: int = 7,
    patterns: Optional[Sequence[ShapeSpec]] = None,
) -> EventStream:
    """
    Continuous stream of `n_patterns` equiprobable moving patterns.

    Segments of `segment_us` are appended on one time axis, each showing a
    uniformly drawn pattern at a random speed, until at least
    `n_events_target` events exist.
    """
    if n_patterns < 1:
        raise ParameterError("n_patterns must be >= 1", "n_patterns", n_patterns)
    if n_events_target < 1:
        raise ParameterError("n_events_target must be >= 1", "n_events_target", n_events_target)
    shapes = list(patterns) if patterns is not None else [
        class_shape(k, n_patterns, shape_size) for k in range(n_patterns)
    ]
    rng = np.random.default_rng(seed)
    segments: list[EventStream] = []
    total = 0
    offset = 0
    while total < n_events_target:
        pattern = shapes[int(rng.integers(len(shapes)))]
        segment = synth_pattern_stream(
            [pattern],
            velocity_range,
            segment_us,
            noise_rate,
            int(rng.integers(2**63 - 1)),
            width,
            height,
        )
        if len(segment) == 0 and noise_rate <= 0:
            raise ParameterError(
                "Patterns produce no events; check sizes and velocity range", "patterns"
            )
        segments.append(segment.shifted(offset))
        total += len(segment)
        offset += segment_us
    return merge_streams(segments)


# ============================================================================
# Download
# ============================================================================


def _archive_name(url: str) -> str:
    name = Path(urlparse(url).path).name
    return name or "archive.zip"


async def _download(client: httpx.AsyncClient, url: str, target: Path) -> None:
    async with client.stream("GET", url) as response:
        if response.status_code >= 400:
            raise DownloadError(
                f"HTTP {response.status_code} fetching archive",
                url=url,
                status=response.status_code,
                retryable=response.status_code >= 500 or response.status_code == 429,
            )
        partial = target.with_suffix(target.suffix + ".part")
        with partial.open("wb") as f:
            async for chunk in response.aiter_bytes():
                f.write(chunk)
        partial.replace(target)


async def fetch_archive(
    url: str,
    dest: Path | str,
    max_retries: int = 3,
    timeout_s: float = 60.0,
    min_wait_s: float = 1.0,
    max_wait_s: float = 10.0,
    client: Optional[httpx.AsyncClient] = None,
) -> Path:
    """
    Download an archive and unpack it into `dest`.

    Transport errors and 5xx/429 responses are retried with exponential
    backoff; zip archives are extracted in place.

    Args:
        url: Archive URL (no default; N-MNIST mirrors vary)
        dest: Target directory (created if missing)
        max_retries: Maximum attempts including the first
        timeout_s: Per-request timeout
        min_wait_s: Lower bound of the backoff wait
        max_wait_s: Upper bound of the backoff wait
        client: Optional preconfigured client (tests inject a mock transport)

    Returns:
        The destination directory

    Raises:
        DownloadError: If every attempt fails or the archive is corrupt

    Example:
        >>> root = await fetch_archive("https://example.org/nmnist.zip", "data/")
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    target = dest / _archive_name(url)

    owned = client is None
    http = client or httpx.AsyncClient(timeout=httpx.Timeout(timeout_s), follow_redirects=True)
    retrying = create_retry_decorator(
        max_attempts=max_retries, min_wait_s=min_wait_s, max_wait_s=max_wait_s
    )
    try:
        await retrying(_download)(http, url, target)
    except httpx.HTTPError as e:
        raise DownloadError(f"Download failed: {e}", url=url, retryable=False) from e
    finally:
        if owned:
            await http.aclose()
    logger.info(f"Downloaded {target.name} ({target.stat().st_size} bytes)")

    if zipfile.is_zipfile(target):
        try:
            with zipfile.ZipFile(target) as archive:
                archive.extractall(dest)
        except zipfile.BadZipFile as e:
            raise DownloadError(f"Corrupt archive: {e}", url=url, retryable=False) from e
        logger.info(f"✅ Extracted {target.name} into {dest}")
    return dest
