"""
Retry policy for dataset downloads.

Implements bounded retries with exponential backoff for transient errors.
"""

from typing import Any, Callable, TypeVar

import httpx
from tenacity import (
    retry,
    retry_if_exception,
    stop_after_attempt,
    wait_exponential,
)

from feast_events.errors import FeastError

T = TypeVar("T")


def is_retryable_error(exception: BaseException) -> bool:
    """
    Determine if an exception should be retried.

    Args:
        exception: Exception to check

    Returns:
        True if the exception is retryable
    """
    if isinstance(exception, FeastError):
        return exception.retryable
    # Connection resets, read timeouts, etc are retryable
    return isinstance(exception, (httpx.TransportError, ConnectionError, TimeoutError))


def create_retry_decorator(
    max_attempts: int = 3,
    min_wait_s: float = 1.0,
    max_wait_s: float = 10.0,
) -> Callable[..., Any]:
    """
    Create a retry decorator with the download retry policy.

    Args:
        max_attempts: Maximum number of attempts (including initial)
        min_wait_s: Lower bound of the backoff wait
        max_wait_s: Upper bound of the backoff wait

    Returns:
        Retry decorator (works on sync and async callables)

    Example:
        >>> @create_retry_decorator(max_attempts=3)
        ... async def download():
        ...     pass
    """
    return retry(
        stop=stop_after_attempt(max_attempts),
        wait=wait_exponential(multiplier=1, min=min_wait_s, max=max_wait_s),
        retry=retry_if_exception(is_retryable_error),
        reraise=True,
    )
