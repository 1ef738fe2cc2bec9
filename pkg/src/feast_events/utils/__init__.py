"""Utility modules for feast-events."""

from feast_events.utils.correlation import (
    CorrelationError,
    RunLogger,
    make_run_id,
    validate_run_id,
)
from feast_events.utils.hashing import canonicalize, content_hash

__all__ = [
    "make_run_id",
    "validate_run_id",
    "RunLogger",
    "CorrelationError",
    "canonicalize",
    "content_hash",
]
