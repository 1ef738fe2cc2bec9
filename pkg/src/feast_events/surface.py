"""
Time surfaces and ROI descriptors.

A surface keeps, per polarity channel, the timestamp of the last event seen at
every pixel. Descriptors are w x w windows of that surface read through a
decay kernel, centered on the triggering event, vectorized row-major and
L2-normalized.
"""

from __future__ import annotations

import csv
import io
import logging
from enum import Enum, IntEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from feast_events.errors import (
    InternalInvariantError,
    OutOfBoundsError,
    ParameterError,
    TimeRegressionError,
)
from feast_events.events import Event

logger = logging.getLogger(__name__)

# "never fired" sentinel; reads as 0 under every kernel
NEVER = np.iinfo(np.int64).min


class Channel(IntEnum):
    """Polarity channel index into the surface."""

    ON = 0
    OFF = 1

    @classmethod
    def of(cls, polarity: int) -> "Channel":
        return cls.ON if polarity > 0 else cls.OFF


class Kernel(str, Enum):
    """Surface read-out kernel."""

    EXPONENTIAL = "exponential"
    FIXED = "fixed"


class SurfaceParams(BaseModel):
    """Time-surface and descriptor parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tau_us: float = Field(default=10_000.0, gt=0, description="Decay constant in microseconds")
    kernel: Kernel = Field(default=Kernel.EXPONENTIAL, description="Read-out kernel")
    roi_w: int = Field(default=11, ge=1, le=63, description="ROI side length (odd)")

    @field_validator("roi_w")
    @classmethod
    def _check_odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"roi_w must be odd so the window centers on the event, got {value}")
        return value


class SurfaceState:
    """
    Per-polarity last-event-timestamp maps over the sensor grid.

    Mutated in event order; one instance per stream.
    """

    def __init__(self, width: int, height: int):
        if width < 1 or height < 1:
            raise ParameterError("Surface dimensions must be positive", "shape", (width, height))
        self.width = width
        self.height = height
        self.last_t = np.full((2, height, width), NEVER, dtype=np.int64)

    def copy(self) -> "SurfaceState":
        clone = SurfaceState(self.width, self.height)
        clone.last_t[...] = self.last_t
        return clone

    def touched(self, channel: Channel) -> np.ndarray:
        return self.last_t[channel] != NEVER


class Descriptor(BaseModel):
    """Normalized ROI descriptor of one event."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray = Field(..., description="Unit-norm vector of length w*w")
    source_event: Event = Field(..., description="Triggering event")


# ============================================================================
# Updates
# ============================================================================


def surface_update(state: SurfaceState, event: Event) -> SurfaceState:
    """
    Write an event into its polarity channel.

    Raises:
        OutOfBoundsError: If the pixel lies outside the grid
        TimeRegressionError: If the event is older than the pixel's last event
    """
    write_event(state, event.x, event.y, event.t, Channel.of(event.p))
    return state


def write_event(state: SurfaceState, x: int, y: int, t: int, channel: int) -> None:
    if not (0 <= x < state.width and 0 <= y < state.height):
        raise OutOfBoundsError(
            f"Event at ({x}, {y}) is outside the {state.width}x{state.height} surface", x=x, y=y
        )
    last = state.last_t[channel, y, x]
    if t < last:
        raise TimeRegressionError(
            f"Time regression at pixel ({x}, {y}): t={t} < last_t={last}",
            x=x,
            y=y,
            last_t=int(last),
            t=t,
        )
    state.last_t[channel, y, x] = t


# ============================================================================
# Kernels
# ============================================================================


def _check_tau(tau_us: float) -> None:
    if not tau_us > 0:
        raise ParameterError(f"tau must be positive, got {tau_us}", "tau_us", tau_us)


def _exponential(last_t: np.ndarray, t_now: int, tau_us: float) -> np.ndarray:
    hot = last_t != NEVER
    out = np.zeros(last_t.shape, dtype=np.float64)
    out[hot] = np.exp((last_t[hot] - t_now) / tau_us)
    return out


def _fixed(last_t: np.ndarray, t_now: int, tau_us: float) -> np.ndarray:
    hot = last_t != NEVER
    out = np.zeros(last_t.shape, dtype=np.float64)
    age = t_now - last_t[hot]
    out[hot] = (age >= 0) & (age <= tau_us)
    return out


_KERNELS = {Kernel.EXPONENTIAL: _exponential, Kernel.FIXED: _fixed}


def sample_exponential(
    state: SurfaceState, channel: Channel, t_now: int, tau_us: float
) -> np.ndarray:
    """Full-frame exponential decay read-out; untouched pixels read 0."""
    _check_tau(tau_us)
    return _exponential(state.last_t[channel], t_now, tau_us)


def sample_fixed_window(
    state: SurfaceState, channel: Channel, t_now: int, tau_us: float
) -> np.ndarray:
    """Full-frame binary read-out: 1 where 0 <= t_now - last_t <= tau."""
    _check_tau(tau_us)
    return _fixed(state.last_t[channel], t_now, tau_us)


def sample_frame(
    state: SurfaceState, channel: Channel, t_now: int, tau_us: float, kernel: Kernel
) -> np.ndarray:
    """Full-frame read-out with the given kernel."""
    _check_tau(tau_us)
    return _KERNELS[kernel](state.last_t[channel], t_now, tau_us)


# ============================================================================
# Descriptors
# ============================================================================


def window_values(
    state: SurfaceState,
    x: int,
    y: int,
    t: int,
    channel: int,
    w: int,
    tau_us: float,
    kernel: Kernel,
) -> np.ndarray:
    """
    Un-normalized w x w window around (x, y), flattened row-major.

    Cells outside the sensor read 0.
    """
    r = w // 2
    x0, x1 = max(x - r, 0), min(x + r + 1, state.width)
    y0, y1 = max(y - r, 0), min(y + r + 1, state.height)
    window = np.zeros((w, w), dtype=np.float64)
    patch = state.last_t[channel, y0:y1, x0:x1]
    window[y0 - (y - r) : y1 - (y - r), x0 - (x - r) : x1 - (x - r)] = _KERNELS[kernel](
        patch, t, tau_us
    )
    return window.reshape(-1)


def normalize_window(values: np.ndarray) -> np.ndarray:
    norm = float(np.sqrt(values @ values))
    if norm == 0.0:
        raise InternalInvariantError(
            "Descriptor window has zero norm; the triggering event must be applied first"
        )
    return values / norm


def extract_descriptor(
    state: SurfaceState,
    event: Event,
    w: int,
    tau_us: float,
    kernel: Kernel = Kernel.EXPONENTIAL,
) -> Descriptor:
    """
    Normalized descriptor of the window centered on `event`.

    The event must already have been written with surface_update.

    Raises:
        ParameterError: If w is even or tau is not positive
        InternalInvariantError: If the window is empty
    """
    if w < 1 or w % 2 == 0:
        raise ParameterError(f"Window side must be odd, got {w}", "w", w)
    _check_tau(tau_us)
    raw = window_values(state, event.x, event.y, event.t, Channel.of(event.p), w, tau_us, kernel)
    return Descriptor(values=normalize_window(raw), source_event=event)


def frame_to_csv(frame: np.ndarray) -> str:
    """Render a frame as a CSV grid (one row per sensor row)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for row in frame:
        writer.writerow([repr(float(v)) for v in row])
    return buffer.getvalue()
