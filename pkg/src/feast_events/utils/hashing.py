"""Canonical JSON and content hashing for self-describing artifacts."""

import hashlib
import json
from typing import Any


def canonicalize(obj: Any) -> str:
    """
    Canonicalize a JSON-compatible object to a deterministic string.

    Uses sorted keys and compact separators so equal objects always hash
    identically.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def content_hash(obj: Any, length: int = 16) -> str:
    """
    SHA-256 of the canonical form, truncated to `length` hex digits.

    Args:
        obj: JSON-compatible object
        length: Number of hex digits to keep (max 64)

    Returns:
        Hex digest prefix
    """
    digest = hashlib.sha256(canonicalize(obj).encode("utf-8")).hexdigest()
    return digest[:length]
