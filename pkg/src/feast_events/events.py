"""
Event data model, N-MNIST codec and synthetic event generators.

An event stream is held column-wise (x, y, t, p arrays) so the hot training
loop and the codec can work on numpy views. Single events are exposed as
frozen pydantic models for the public, per-event API.

N-MNIST record layout (5 bytes, big-endian bit order):
    * byte 0: x address
    * byte 1: y address
    * byte 2 bit 7: polarity (1 => ON, 0 => OFF)
    * bits 22-0 of bytes 2-4: timestamp in microseconds
"""

from __future__ import annotations

import logging
import math
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from feast_events.errors import (
    DatasetError,
    DimensionMismatchError,
    EncodeRangeError,
    MalformedStreamError,
    OutOfRangeError,
    ParameterError,
)

logger = logging.getLogger(__name__)

NMNIST_WIDTH = 34
NMNIST_HEIGHT = 34
NMNIST_RECORD_BYTES = 5
TIMESTAMP_BITS = 23
MAX_TIMESTAMP = (1 << TIMESTAMP_BITS) - 1


class Polarity(IntEnum):
    """Sign of the log-intensity change."""

    OFF = -1
    ON = 1


# ============================================================================
# Events & streams
# ============================================================================


class Event(BaseModel):
    """One sensor event."""

    model_config = ConfigDict(frozen=True)

    x: int = Field(..., ge=0, description="Pixel column")
    y: int = Field(..., ge=0, description="Pixel row")
    t: int = Field(..., ge=0, description="Timestamp in microseconds")
    p: int = Field(..., description="Polarity, -1 (OFF) or +1 (ON)")

    @field_validator("p")
    @classmethod
    def _check_polarity(cls, value: int) -> int:
        if value not in (-1, 1):
            raise ValueError(f"polarity must be -1 or +1, got {value}")
        return value


def _as_column(values: Any, dtype: type) -> np.ndarray:
    array = np.ascontiguousarray(np.asarray(values, dtype=dtype).reshape(-1))
    array.setflags(write=False)
    return array


class EventStream(BaseModel):
    """
    Time-ordered events over a fixed sensor grid.

    Columns are read-only numpy arrays; the stream is immutable once built.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    width: int = Field(..., ge=1, description="Sensor width in pixels")
    height: int = Field(..., ge=1, description="Sensor height in pixels")
    x: np.ndarray = Field(..., description="Pixel columns (int64)")
    y: np.ndarray = Field(..., description="Pixel rows (int64)")
    t: np.ndarray = Field(..., description="Timestamps in microseconds (int64)")
    p: np.ndarray = Field(..., description="Polarities in {-1, +1} (int8)")

    @model_validator(mode="before")
    @classmethod
    def _coerce_columns(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            for name, dtype in (("x", np.int64), ("y", np.int64), ("t", np.int64), ("p", np.int8)):
                if name in data:
                    data[name] = _as_column(data[name], dtype)
        return data

    @model_validator(mode="after")
    def _check_invariants(self) -> "EventStream":
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns must have equal lengths")
        if n == 0:
            return self
        if self.x.min() < 0 or self.y.min() < 0:
            raise ValueError("pixel coordinates must be non-negative")
        if self.x.max() >= self.width or self.y.max() >= self.height:
            raise ValueError(
                f"pixel coordinates must lie inside the {self.width}x{self.height} sensor"
            )
        if self.t.min() < 0:
            raise ValueError("timestamps must be non-negative")
        if np.any(np.diff(self.t) < 0):
            raise ValueError("events must be sorted by timestamp")
        if not np.all(np.abs(self.p) == 1):
            raise ValueError("polarity must be -1 or +1")
        return self

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls(width=width, height=height, x=[], y=[], t=[], p=[])

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event]) -> "EventStream":
        """Build a stream from event models (must already be time-sorted)."""
        return cls(
            width=width,
            height=height,
            x=[e.x for e in events],
            y=[e.y for e in events],
            t=[e.t for e in events],
            p=[e.p for e in events],
        )

    @classmethod
    def from_unsorted(
        cls,
        width: int,
        height: int,
        x: Any,
        y: Any,
        t: Any,
        p: Any,
    ) -> "EventStream":
        """Build a stream from unsorted columns with a stable sort on t."""
        t_arr = np.asarray(t, dtype=np.int64).reshape(-1)
        order = np.argsort(t_arr, kind="stable")
        return cls(
            width=width,
            height=height,
            x=np.asarray(x, dtype=np.int64).reshape(-1)[order],
            y=np.asarray(y, dtype=np.int64).reshape(-1)[order],
            t=t_arr[order],
            p=np.asarray(p, dtype=np.int8).reshape(-1)[order],
        )

    # ------------------------------------------------------------------
    # Access
    # ------------------------------------------------------------------

    def __len__(self) -> int:
        return int(len(self.t))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    def __hash__(self) -> int:
        return hash((self.width, self.height, self.t.tobytes(), self.x.tobytes()))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def duration_us(self) -> int:
        """Span from t=0 to one past the last timestamp."""
        return int(self.t[-1]) + 1 if len(self.t) else 0

    def event(self, index: int) -> Event:
        return Event(
            x=int(self.x[index]),
            y=int(self.y[index]),
            t=int(self.t[index]),
            p=int(self.p[index]),
        )

    def iter_events(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self.event(i)

    def is_sorted(self) -> bool:
        """Linear scan of the sort invariant."""
        return bool(np.all(self.t[1:] >= self.t[:-1]))

    def shifted(self, offset_us: int) -> "EventStream":
        """Copy with every timestamp moved by `offset_us`."""
        return EventStream(
            width=self.width,
            height=self.height,
            x=self.x,
            y=self.y,
            t=self.t + int(offset_us),
            p=self.p,
        )

    def select(self, mask: np.ndarray) -> "EventStream":
        """Sub-stream of the events where `mask` is true (order preserved)."""
        return EventStream(
            width=self.width,
            height=self.height,
            x=self.x[mask],
            y=self.y[mask],
            t=self.t[mask],
            p=self.p[mask],
        )


# ============================================================================
# N-MNIST codec
# ============================================================================


def decode_nmnist(data: bytes) -> EventStream:
    """
    Decode an N-MNIST `.bin` payload.

    Args:
        data: Raw file contents

    Returns:
        34 x 34 event stream

    Raises:
        MalformedStreamError: If the length is not a multiple of 5 or the
            timestamps go backwards
        OutOfRangeError: If a record addresses a pixel outside 34 x 34
    """
    if len(data) % NMNIST_RECORD_BYTES:
        raise MalformedStreamError(
            f"N-MNIST payload length {len(data)} is not a multiple of {NMNIST_RECORD_BYTES}",
            byte_length=len(data),
        )

    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, NMNIST_RECORD_BYTES)
    x = records[:, 0].astype(np.int64)
    y = records[:, 1].astype(np.int64)

    bad = np.flatnonzero((x >= NMNIST_WIDTH) | (y >= NMNIST_HEIGHT))
    if bad.size:
        index = int(bad[0])
        raise OutOfRangeError(
            f"Record {index} addresses pixel ({x[index]}, {y[index]}) outside "
            f"{NMNIST_WIDTH}x{NMNIST_HEIGHT}",
            record_index=index,
            x=int(x[index]),
            y=int(y[index]),
        )

    b2 = records[:, 2].astype(np.int64)
    p = np.where(b2 & 0x80, 1, -1).astype(np.int8)
    t = ((b2 & 0x7F) << 16) | (records[:, 3].astype(np.int64) << 8) | records[:, 4]

    back = np.flatnonzero(np.diff(t) < 0)
    if back.size:
        index = int(back[0]) + 1
        raise MalformedStreamError(
            f"Record {index} at t={t[index]} precedes record {index - 1} at t={t[index - 1]}",
            byte_length=len(data),
            record_index=index,
        )

    return EventStream(width=NMNIST_WIDTH, height=NMNIST_HEIGHT, x=x, y=y, t=t, p=p)


def encode_nmnist(stream: EventStream) -> bytes:
    """
    Encode a stream in the N-MNIST record layout.

    Raises:
        EncodeRangeError: If a coordinate exceeds 8 bits or a timestamp 23 bits
    """
    for name, column, limit in (("x", stream.x, 256), ("y", stream.y, 256)):
        over = np.flatnonzero(column >= limit)
        if over.size:
            index = int(over[0])
            raise EncodeRangeError(
                f"Event {index} has {name}={column[index]} which does not fit 8 bits",
                field=name,
                value=int(column[index]),
                index=index,
            )
    over = np.flatnonzero(stream.t > MAX_TIMESTAMP)
    if over.size:
        index = int(over[0])
        raise EncodeRangeError(
            f"Event {index} has t={stream.t[index]} which does not fit {TIMESTAMP_BITS} bits",
            field="t",
            value=int(stream.t[index]),
            index=index,
        )

    records = np.empty((len(stream), NMNIST_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = stream.x
    records[:, 1] = stream.y
    records[:, 2] = ((stream.t >> 16) & 0x7F) | np.where(stream.p > 0, 0x80, 0)
    records[:, 3] = (stream.t >> 8) & 0xFF
    records[:, 4] = stream.t & 0xFF
    return records.tobytes()


def read_nmnist(path: Path | str) -> EventStream:
    """Read and decode one N-MNIST `.bin` file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DatasetError(f"Cannot read N-MNIST file: {e}", path=str(path)) from e
    try:
        return decode_nmnist(data)
    except (MalformedStreamError, OutOfRangeError) as e:
        logger.error(f"❌ {path}: {e.message}")
        raise


def write_nmnist(path: Path | str, stream: EventStream) -> None:
    Path(path).write_bytes(encode_nmnist(stream))


# ============================================================================
# Merging
# ============================================================================


def merge_streams(streams: Sequence[EventStream]) -> EventStream:
    """
    Stable time-sorted merge.

    Ties keep the order of `streams`, then the order within each stream.

    Raises:
        ParameterError: If no streams are given
        DimensionMismatchError: If sensor dimensions differ
    """
    if not streams:
        raise ParameterError("merge_streams needs at least one stream", parameter="streams")

    first = streams[0]
    for other in streams[1:]:
        if other.shape != first.shape:
            raise DimensionMismatchError(
                "Cannot merge streams with different sensor dimensions",
                expected=first.shape,
                got=other.shape,
            )

    return EventStream.from_unsorted(
        first.width,
        first.height,
        np.concatenate([s.x for s in streams]),
        np.concatenate([s.y for s in streams]),
        np.concatenate([s.t for s in streams]),
        np.concatenate([s.p for s in streams]),
    )


# ============================================================================
# Synthetic generators
# ============================================================================


class ShapeKind(str, Enum):
    """Templates for synthetic moving shapes."""

    BAR = "bar"  # vertical bar
    HBAR = "hbar"  # horizontal bar
    SQUARE = "square"
    CROSS = "cross"
    TRIANGLE = "triangle"
    DIAGONAL = "diagonal"
    RING = "ring"
    CHEVRON = "chevron"


class ShapeSpec(BaseModel):
    """One moving shape in a synthetic recording."""

    model_config = ConfigDict(frozen=True)

    kind: ShapeKind = Field(..., description="Template")
    size: int = Field(default=7, ge=1, le=64, description="Template side in pixels")
    direction_deg: float = Field(default=0.0, description="Direction of travel, 0 = +x, 90 = +y")
    x0: Optional[float] = Field(None, description="Initial center column (None = enter upwind)")
    y0: Optional[float] = Field(None, description="Initial center row (None = enter upwind)")
    start_us: int = Field(default=0, ge=0, description="Time the shape starts moving")
    speed: Optional[float] = Field(
        None, gt=0, description="Speed in px/s (None = draw from the velocity range)"
    )

    @classmethod
    def parse(cls, text: str, default_size: int = 7) -> "ShapeSpec":
        """
        Parse the compact config form `kind[:direction_deg[:size]]`.

        A missing size falls back to `default_size`.

        Example:
            >>> ShapeSpec.parse("bar:90:5").size
            5
        """
        parts = [part.strip() for part in text.split(":")]
        if not parts[0]:
            raise ParameterError(f"Empty shape spec: {text!r}", parameter="shapes", value=text)
        try:
            kind = ShapeKind(parts[0])
            direction = float(parts[1]) if len(parts) > 1 and parts[1] else 0.0
            size = int(parts[2]) if len(parts) > 2 and parts[2] else default_size
        except ValueError as e:
            raise ParameterError(f"Invalid shape spec {text!r}: {e}", parameter="shapes") from e
        return cls(kind=kind, direction_deg=direction, size=size)


def shape_mask(kind: ShapeKind, size: int) -> np.ndarray:
    """Boolean template (rows = y, columns = x) for a shape kind."""
    s = size
    idx = np.arange(s)
    mask = np.zeros((s, s), dtype=bool)
    c = s // 2
    if kind is ShapeKind.BAR:
        mask[:, c] = True
    elif kind is ShapeKind.HBAR:
        mask[c, :] = True
    elif kind is ShapeKind.SQUARE:
        mask[:, :] = True
    elif kind is ShapeKind.CROSS:
        mask[c, :] = True
        mask[:, c] = True
    elif kind is ShapeKind.TRIANGLE:
        mask = idx[None, :] <= idx[:, None]
    elif kind is ShapeKind.DIAGONAL:
        mask[idx, idx] = True
    elif kind is ShapeKind.RING:
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
    elif kind is ShapeKind.CHEVRON:
        mask[idx, np.minimum(idx, s - 1 - idx)] = True
    return mask


def _leading_cells(mask: np.ndarray, axis: int, sign: int) -> np.ndarray:
    """Cells of `mask` whose neighbour in the direction of travel is empty."""
    padded = np.pad(mask, 1)
    shifted = np.roll(padded, -sign, axis=axis)[1:-1, 1:-1]
    return mask & ~shifted


def _shape_events(
    spec: ShapeSpec,
    speed: float,
    duration_us: int,
    width: int,
    height: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Leading-edge events of one shape: integer-pixel crossings of its edge cells."""
    mask = shape_mask(spec.kind, spec.size)
    theta = math.radians(spec.direction_deg)
    ux, uy = math.cos(theta), math.sin(theta)
    # sub-1e-12 components are rounding noise from cos/sin
    ux = 0.0 if abs(ux) < 1e-12 else ux
    uy = 0.0 if abs(uy) < 1e-12 else uy
    v = (ux * speed * 1e-6, uy * speed * 1e-6)  # px per microsecond

    reach = max(width, height) / 2.0 + spec.size
    cx = spec.x0 if spec.x0 is not None else width / 2.0 - ux * reach
    cy = spec.y0 if spec.y0 is not None else height / 2.0 - uy * reach
    center = (cx, cy)

    rows, cols = np.nonzero(mask)
    half = (spec.size - 1) / 2.0
    offsets = {0: cols - half, 1: rows - half}  # axis 0 = x, axis 1 = y

    t_end = duration_us - spec.start_us
    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    ts: list[np.ndarray] = []

    for axis in (0, 1):
        va = v[axis]
        if va == 0.0 or t_end <= 0:
            continue
        sign = 1 if va > 0 else -1
        leading = _leading_cells(mask, axis=1 - axis, sign=sign)[rows, cols]
        for i in np.flatnonzero(leading):
            da = offsets[axis][i]
            db = offsets[1 - axis][i]
            p_start = center[axis] + da
            p_end = p_start + va * t_end
            lo, hi = sorted((p_start, p_end))
            ks = np.arange(math.ceil(lo), math.floor(hi) + 1, dtype=np.float64)
            if ks.size == 0:
                continue
            dt = (ks - p_start) / va
            pos_b = center[1 - axis] + db + v[1 - axis] * dt
            pix_a = ks.astype(np.int64)
            pix_b = np.round(pos_b).astype(np.int64)
            t = np.round(dt).astype(np.int64) + spec.start_us
            if axis == 0:
                xs.append(pix_a)
                ys.append(pix_b)
            else:
                xs.append(pix_b)
                ys.append(pix_a)
            ts.append(t)

    if not ts:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty

    x = np.concatenate(xs)
    y = np.concatenate(ys)
    t = np.concatenate(ts)
    keep = (x >= 0) & (x < width) & (y >= 0) & (y < height) & (t >= 0) & (t < duration_us)
    x, y, t = x[keep], y[keep], t[keep]

    # diagonal motion can cross x and y integers at the same instant
    triples = np.unique(np.stack([t, y, x], axis=1), axis=0)
    return triples[:, 2], triples[:, 1], triples[:, 0]


def _noise_events(
    rng: np.random.Generator,
    duration_us: int,
    rate_hz: float,
    width: int,
    height: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    lam = rate_hz * duration_us * 1e-6
    counts = rng.poisson(lam, size=height * width)
    total = int(counts.sum())
    pixel = np.repeat(np.arange(height * width, dtype=np.int64), counts)
    t = rng.integers(0, duration_us, size=total, dtype=np.int64)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=total)
    return pixel % width, pixel // width, t, p


def synth_pattern_stream(
    shapes: Sequence[ShapeSpec],
    velocity_range: tuple[float, float],
    duration_us: int,
    noise_rate_hz_per_pixel: float,
    seed: int,
    width: int = 32,
    height: int = 32,
) -> EventStream:
    """
    Synthetic recording of shapes moving through the field plus sensor noise.

    Shapes emit ON events where their leading edge crosses a pixel; noise is a
    per-pixel Poisson process with uniform polarity. Deterministic per seed.

    Args:
        shapes: Moving shapes
        velocity_range: (min, max) speed in px/s for shapes without a fixed speed
        duration_us: Recording length
        noise_rate_hz_per_pixel: Background activity rate
        seed: RNG seed
        width: Sensor width
        height: Sensor height

    Returns:
        Time-sorted stream (empty for degenerate parameters)
    """
    if duration_us <= 0 or (not shapes and noise_rate_hz_per_pixel <= 0):
        return EventStream.empty(width, height)

    rng = np.random.default_rng(seed)
    v_lo, v_hi = sorted(velocity_range)

    xs, ys, ts, ps = [], [], [], []
    for spec in shapes:
        speed = spec.speed if spec.speed is not None else float(rng.uniform(v_lo, v_hi))
        if speed <= 0:
            continue
        x, y, t = _shape_events(spec, speed, duration_us, width, height)
        xs.append(x)
        ys.append(y)
        ts.append(t)
        ps.append(np.ones(len(t), dtype=np.int8))

    if noise_rate_hz_per_pixel > 0:
        x, y, t, p = _noise_events(rng, duration_us, noise_rate_hz_per_pixel, width, height)
        xs.append(x)
        ys.append(y)
        ts.append(t)
        ps.append(p)

    if not ts:
        return EventStream.empty(width, height)

    return EventStream.from_unsorted(
        width,
        height,
        np.concatenate(xs),
        np.concatenate(ys),
        np.concatenate(ts),
        np.concatenate(ps),
    )


def synth_noise(
    duration_us: int,
    noise_rate_hz_per_pixel: float,
    seed: int,
    width: int = 32,
    height: int = 32,
) -> EventStream:
    """Pure background-activity stream."""
    return synth_pattern_stream(
        [], (0.0, 0.0), duration_us, noise_rate_hz_per_pixel, seed, width, height
    )
