"""
Tests for run ID discipline.

Run IDs tag log lines of one CLI invocation with a time-ordered UUIDv7.
"""

import logging
from uuid import UUID

import pytest

from feast_events.utils.correlation import (
    CorrelationError,
    RunLogger,
    make_run_id,
    validate_run_id,
)


def test_make_run_id():
    """Test creating a canonical run ID."""
    rid = make_run_id("train")

    assert rid.startswith("run:train|r:")

    command, uuid = validate_run_id(rid)
    assert command == "train"
    assert isinstance(uuid, UUID)
    assert uuid.version == 7


def test_make_run_id_invalid_command():
    """Test that command names cannot contain pipes."""
    with pytest.raises(CorrelationError, match="cannot contain '\\|'"):
        make_run_id("train|evil")


def test_make_run_id_empty_command():
    """Test that command names cannot be empty."""
    with pytest.raises(CorrelationError, match="cannot be empty"):
        make_run_id("")


def test_validate_run_id_valid():
    """Test validating a valid run ID."""
    rid = "run:size-sweep|r:0194f0b0-1234-7890-abcd-ef0123456789"
    command, uuid = validate_run_id(rid)

    assert command == "size-sweep"
    assert str(uuid) == "0194f0b0-1234-7890-abcd-ef0123456789"


def test_validate_run_id_invalid_format():
    """Test validating an invalid run ID format."""
    with pytest.raises(CorrelationError, match="Invalid run ID format"):
        validate_run_id("invalid")

    with pytest.raises(CorrelationError, match="Invalid run ID format"):
        validate_run_id("run:train")

    with pytest.raises(CorrelationError, match="Invalid run ID format"):
        validate_run_id("run:Train|r:0194f0b0-1234-7890-abcd-ef0123456789")


def test_run_ids_are_unique():
    """Test that consecutive run IDs differ."""
    assert make_run_id("train") != make_run_id("train")


def test_run_logger_stamps_records(caplog):
    """Test RunLogger adds the run ID to every record."""
    rid = make_run_id("evaluate")
    log = RunLogger(logging.getLogger("run_logger_test"), rid)

    with caplog.at_level(logging.INFO, logger="run_logger_test"):
        log.info("hello")

    assert caplog.records[-1].run_id == rid


def test_run_logger_rejects_bad_run_id():
    """Test RunLogger validates its run ID."""
    with pytest.raises(CorrelationError):
        RunLogger(logging.getLogger("run_logger_test"), "nope")
