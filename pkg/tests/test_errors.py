"""
Tests for structured error handling.

Every error carries a stable code and details, and maps to a CLI exit code.
"""

import pytest

from feast_events.errors import (
    ArtifactError,
    ConfigError,
    DatasetError,
    DownloadError,
    EncodeRangeError,
    FeastError,
    InternalInvariantError,
    LabelRangeError,
    MalformedStreamError,
    OutOfBoundsError,
    OutOfRangeError,
    ParameterError,
    TimeRegressionError,
    exit_code_for,
)


def test_feast_error_basic():
    """Test basic FeastError creation."""
    error = FeastError(
        code="TEST_ERROR",
        message="Test error message",
        details={"foo": "bar"},
        retryable=True,
    )

    assert error.code == "TEST_ERROR"
    assert error.message == "Test error message"
    assert error.details == {"foo": "bar"}
    assert error.retryable is True
    assert str(error) == "Test error message"


def test_feast_error_to_dict():
    """Test the machine-readable form."""
    error = FeastError("TEST_ERROR", "boom")

    assert error.to_dict() == {
        "code": "TEST_ERROR",
        "message": "boom",
        "details": {},
        "retryable": False,
    }


def test_feast_error_repr():
    """Test repr includes code and details."""
    error = ParameterError("bad tau", "tau_us", -1.0)

    text = repr(error)
    assert "ParameterError" in text
    assert "INVALID_PARAMETER" in text
    assert "tau_us" in text


def test_malformed_stream_error():
    """Test MalformedStreamError."""
    error = MalformedStreamError("bad length", byte_length=7)

    assert error.code == "MALFORMED_STREAM"
    assert error.details == {"byte_length": 7}
    assert error.retryable is False


def test_out_of_range_error():
    """Test OutOfRangeError records the offending record."""
    error = OutOfRangeError("bad pixel", record_index=3, x=40, y=2)

    assert error.code == "OUT_OF_RANGE"
    assert error.record_index == 3
    assert error.details == {"record_index": 3, "x": 40, "y": 2}


def test_encode_range_error():
    """Test EncodeRangeError."""
    error = EncodeRangeError("too wide", field="x", value=300, index=0)

    assert error.code == "RANGE_ERROR"
    assert error.details["field"] == "x"


def test_time_regression_error():
    """Test TimeRegressionError details."""
    error = TimeRegressionError("older", x=1, y=2, last_t=50, t=40)

    assert error.code == "TIME_REGRESSION"
    assert error.details == {"x": 1, "y": 2, "last_t": 50, "t": 40}


def test_label_range_error_without_class_count():
    """Test LabelRangeError omits n_classes when unknown."""
    assert LabelRangeError("negative", label=-1).details == {"label": -1}
    assert LabelRangeError("high", label=5, n_classes=3).details == {"label": 5, "n_classes": 3}


def test_config_error_field_errors():
    """Test ConfigError carries field errors."""
    error = ConfigError("invalid", field_errors=[{"key": "feast.eta", "reason": "too big"}])

    assert error.code == "CONFIG_INVALID"
    assert error.details["field_errors"][0]["key"] == "feast.eta"


def test_download_error_is_retryable_by_default():
    """Test DownloadError defaults to retryable."""
    error = DownloadError("HTTP 503", url="https://example.org/a.zip", status=503)

    assert error.retryable is True
    assert error.details == {"url": "https://example.org/a.zip", "status": 503}
    assert DownloadError("HTTP 404", retryable=False).retryable is False


@pytest.mark.parametrize(
    "error,code",
    [
        (ConfigError("x"), 2),
        (DatasetError("x"), 3),
        (ArtifactError("x"), 3),
        (MalformedStreamError("x"), 4),
        (OutOfBoundsError("x", 0, 0), 5),
        (ParameterError("x"), 6),
        (DownloadError("x"), 7),
        (InternalInvariantError("x"), 70),
        (FeastError("UNEXPECTED_ERROR", "x"), 1),
    ],
)
def test_exit_codes(error, code):
    """Test every error class maps to its exit code."""
    assert exit_code_for(error) == code


def test_exit_code_uses_nearest_base_class():
    """Test subclasses inherit their parent's exit code."""

    class CustomParameterError(ParameterError):
        pass

    assert exit_code_for(CustomParameterError("x")) == 6
