"""
Run correlation IDs.

Every CLI invocation is tagged with a run ID in the canonical format
run:<command>|r:<UUIDv7> so log lines from one experiment can be grouped and
ordered by start time. Run IDs go to logs only, never into artifacts.
"""

import logging
import re
from collections.abc import MutableMapping
from typing import Any
from uuid import UUID

from uuid6 import uuid7

# Canonical format: run:<command>|r:<uuidv7>
RUN_ID_PATTERN = re.compile(r"^run:([a-z0-9][a-z0-9-]*)\|r:([0-9a-fA-F-]{36})$")


class CorrelationError(ValueError):
    """Raised when run ID validation fails."""

    pass


def make_run_id(command: str) -> str:
    """
    Create a canonical run ID.

    Args:
        command: CLI command name (lowercase letters, digits and '-')

    Returns:
        Canonical run ID: run:<command>|r:<uuidv7>

    Raises:
        CorrelationError: If the command name is empty or contains '|'

    Example:
        >>> rid = make_run_id("train")
        >>> rid.startswith("run:train|r:")
        True
    """
    if not command.strip():
        raise CorrelationError("Command name cannot be empty")
    if "|" in command:
        raise CorrelationError(f"Command name cannot contain '|': {command}")

    return f"run:{command}|r:{uuid7()}"


def validate_run_id(run_id: str) -> tuple[str, UUID]:
    """
    Validate and parse a run ID.

    Args:
        run_id: Run ID to validate

    Returns:
        Tuple of (command, uuid)

    Raises:
        CorrelationError: If the run ID is invalid
    """
    match = RUN_ID_PATTERN.match(run_id)
    if not match:
        raise CorrelationError(
            f"Invalid run ID format. Expected 'run:<command>|r:<uuidv7>', got: {run_id}"
        )

    command, uuid_str = match.groups()

    try:
        run_uuid = UUID(uuid_str)
    except ValueError as e:
        raise CorrelationError(f"Invalid UUID in run ID: {uuid_str}") from e

    return command, run_uuid


class RunLogger(logging.LoggerAdapter):  # type: ignore[type-arg]
    """Logger adapter that stamps every record with the active run ID."""

    def __init__(self, logger: logging.Logger, run_id: str):
        validate_run_id(run_id)
        super().__init__(logger, {"run_id": run_id})

    def process(self, msg: Any, kwargs: MutableMapping[str, Any]) -> tuple[Any, Any]:
        extra = dict(kwargs.get("extra") or {})
        extra.setdefault("run_id", self.extra["run_id"])  # type: ignore[index]
        kwargs["extra"] = extra
        return msg, kwargs
