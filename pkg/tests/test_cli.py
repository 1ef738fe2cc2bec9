"""
Tests for the `feast` command line.

Commands run with --log-level ERROR so a successful run prints only its
JSON summary; the last output line is always the JSON payload (stdout on
success, the error object on stderr on failure).
"""

import json

import pytest
from click.testing import CliRunner

from feast_events.cli import main
from feast_events.persistence import load_classifier, load_features, read_csv


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    result = runner.invoke(main, ["--log-level", "ERROR", *[str(a) for a in args]])
    lines = result.output.strip().splitlines()
    payload = json.loads(lines[-1]) if lines else None
    return result, payload


@pytest.fixture
def trained(runner, config_file, tmp_path):
    out = tmp_path / "run"
    result, payload = invoke(runner, "train", "--config", config_file, "--out", out)
    assert result.exit_code == 0, result.output
    return out, payload


# =============================================================================
# Success paths
# =============================================================================


def test_train_writes_artifacts(trained):
    """Test train writes features.json and one monitor log per channel."""
    out, payload = trained

    assert (out / "features.json").exists()
    assert set(payload["monitor"]) == {"ON", "OFF"}
    assert (out / "monitor_ON.csv").exists()
    assert payload["n_events"] > 0
    assert load_features(out / "features.json").to_model().sizes == (4, 4)


def test_train_is_byte_deterministic(runner, config_file, tmp_path, trained):
    """Test the same config and seed give identical feature files."""
    out, _ = trained
    again = tmp_path / "again"

    result, _ = invoke(runner, "train", "--config", config_file, "--out", again)

    assert result.exit_code == 0
    assert (again / "features.json").read_bytes() == (out / "features.json").read_bytes()


def test_train_seed_override(runner, config_file, tmp_path, trained):
    """Test --seed changes the learned features."""
    out, _ = trained
    other = tmp_path / "other"

    invoke(runner, "train", "--config", config_file, "--seed", 8, "--out", other)

    assert (other / "features.json").read_bytes() != (out / "features.json").read_bytes()


def test_infer(runner, config_file, tmp_path, trained):
    """Test infer writes a feature-event CSV for the test split."""
    out, _ = trained
    target = tmp_path / "events.csv"

    result, payload = invoke(
        runner,
        "infer",
        "--config",
        config_file,
        "--features",
        out / "features.json",
        "--out",
        target,
    )

    assert result.exit_code == 0
    assert payload == {"feature_events": str(target)}
    header, rows = read_csv(target)
    assert header["on_features"] == "4"
    assert {r["recording"].split("/")[0] for r in rows} == {"synth"}


def test_evaluate(runner, config_file, tmp_path, trained):
    """Test evaluate reports metrics and can save the readout."""
    out, _ = trained
    metrics = tmp_path / "metrics.json"
    readout = tmp_path / "readout.json"

    result, payload = invoke(
        runner,
        "evaluate",
        "--config",
        config_file,
        "--features",
        out / "features.json",
        "--out",
        metrics,
        "--classifier-out",
        readout,
    )

    assert result.exit_code == 0, result.output
    assert payload["source"] == "feast"
    assert (payload["n_train"], payload["n_test"]) == (6, 4)
    assert 0.0 <= payload["accuracy_recording"] <= 1.0
    assert len(payload["confusion"]) == 2
    assert json.loads(metrics.read_text()) == payload
    assert load_classifier(readout).input_dim > 0


def test_evaluate_random_baseline(runner, config_file, tmp_path, trained):
    """Test the random baseline uses untrained features of the same shape."""
    out, _ = trained

    result, payload = invoke(
        runner,
        "evaluate",
        "--config",
        config_file,
        "--features",
        out / "features.json",
        "--out",
        tmp_path / "random.json",
        "--random-baseline",
    )

    assert result.exit_code == 0
    assert payload["source"] == "random"


def test_monitor_report(runner, trained):
    """Test the convergence report of a training log."""
    out, _ = trained

    result, payload = invoke(runner, "monitor", "--log", out / "monitor_ON.csv", "--window-k", 4)

    assert result.exit_code == 0
    assert payload["channel"] == "ON"
    assert payload["period"] == 10
    assert payload["n_samples"] > 0

    log = out / "monitor_ON.csv"
    result, smoothed = invoke(runner, "monitor", "--log", log, "--window-k", 4, "--smooth", 3)
    assert result.exit_code == 0
    assert smoothed["n_samples"] == payload["n_samples"]


def test_dump_features(runner, tmp_path, trained):
    """Test one grid per feature and channel."""
    out, _ = trained
    grids = tmp_path / "grids"

    result, payload = invoke(
        runner, "dump-features", "--features", out / "features.json", "--out-dir", grids
    )

    assert result.exit_code == 0
    assert payload["grids"] == 8
    _, rows = read_csv(grids / "feature_ON_000.csv")
    assert len(rows) == 5


def test_dump_surface(runner, config_file, tmp_path):
    """Test a full-frame surface grid."""
    target = tmp_path / "surface.csv"

    result, _ = invoke(
        runner, "dump-surface", "--config", config_file, "--events", 5, "--out", target
    )

    assert result.exit_code == 0, result.output
    header, rows = read_csv(target)
    assert header["channel"] == "ON"
    assert len(rows) == 16
    assert all(0.0 <= float(v) <= 1.0 for row in rows for v in row.values())


def test_size_sweep(runner, config_file, tmp_path):
    """Test the sweep CSV and the chosen size."""
    target = tmp_path / "sweep.csv"

    result, payload = invoke(
        runner,
        "size-sweep",
        "--config",
        config_file,
        "--sizes",
        "2,3",
        "--trials",
        1,
        "--out",
        target,
    )

    assert result.exit_code == 0, result.output
    assert payload["chosen_size"] in (2, 3)
    _, rows = read_csv(target)
    assert [r["size"] for r in rows] == ["2", "3"]


def test_gini_study(runner, config_file, tmp_path):
    """Test the study writes one row per random configuration."""
    target = tmp_path / "gini.csv"

    result, payload = invoke(
        runner, "gini-study", "--config", config_file, "--n-configs", 2, "--out", target
    )

    assert result.exit_code == 0, result.output
    assert payload["rows"] == 2
    _, rows = read_csv(target)
    assert len(rows) == 2


# =============================================================================
# Failure paths
# =============================================================================


def test_invalid_config_exits_2(runner, tmp_path):
    """Test config errors are reported as JSON with exit code 2."""
    bad = tmp_path / "bad.env"
    bad.write_text("feast.eta=2.0\n")

    result, payload = invoke(runner, "train", "--config", bad, "--out", tmp_path / "out")

    assert result.exit_code == 2
    assert payload["code"] == "CONFIG_INVALID"
    assert payload["details"]["field_errors"][0]["key"] == "feast.eta"


def test_missing_features_exits_3(runner, config_file, tmp_path):
    """Test a missing artifact is exit code 3."""
    result, payload = invoke(
        runner,
        "evaluate",
        "--config",
        config_file,
        "--features",
        tmp_path / "missing.json",
        "--out",
        tmp_path / "m.json",
    )

    assert result.exit_code == 3
    assert payload["code"] == "ARTIFACT_INVALID"


def test_invalid_sizes_exits_2(runner, config_file, tmp_path):
    """Test unparseable --sizes is a config error."""
    result, payload = invoke(
        runner, "size-sweep", "--config", config_file, "--sizes", "2,x", "--out", tmp_path / "s.csv"
    )

    assert result.exit_code == 2
    assert payload["details"]["field_errors"][0]["key"] == "sizing.sizes"


def test_surface_event_count_is_checked(runner, config_file, tmp_path):
    """Test dump-surface rejects an event count of zero."""
    result, payload = invoke(
        runner, "dump-surface", "--config", config_file, "--events", 0, "--out", tmp_path / "s.csv"
    )

    assert result.exit_code == 6
    assert payload["code"] == "INVALID_PARAMETER"
