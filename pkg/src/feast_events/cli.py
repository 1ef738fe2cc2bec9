"""
Command-line entry point: `feast <command>`.

Every command exits 0 on success and prints a JSON summary on stdout. On
failure the error's to_dict() is printed as one JSON line on stderr and the
process exits with the code mapped in errors.EXIT_CODES.
"""

from __future__ import annotations

import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Optional

import click

from feast_events.config import ExperimentConfig
from feast_events.datasets import fetch_archive
from feast_events.errors import ConfigError, FeastError, exit_code_for
from feast_events.experiments import (
    cmd_compare,
    cmd_evaluate,
    cmd_gini_study,
    cmd_infer,
    cmd_size_sweep,
    cmd_train,
    dump_features,
    dump_surface,
    monitor_report,
)
from feast_events.surface import Channel
from feast_events.utils.correlation import RunLogger, make_run_id

logger = logging.getLogger("feast_events")


# ============================================================================
# Logging
# ============================================================================


class JsonFormatter(logging.Formatter):
    """One JSON object per record."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "time": self.formatTime(record),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "run_id": getattr(record, "run_id", None),
        }
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True)


class _RunIdFilter(logging.Filter):
    def __init__(self, run_id: str):
        super().__init__()
        self.run_id = run_id

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "run_id"):
            record.run_id = self.run_id
        return True


def configure_logging(level: str, fmt: str, run_id: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if fmt == "json":
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s [%(run_id)s] %(name)s: %(message)s")
        )
    handler.addFilter(_RunIdFilter(run_id))
    logger.handlers[:] = [handler]
    logger.setLevel(level.upper())
    logger.propagate = False


# ============================================================================
# Helpers
# ============================================================================


def _echo_json(payload: Any) -> None:
    click.echo(json.dumps(payload, sort_keys=True, default=str))


def _run(ctx: click.Context, command: str, action: Callable[[RunLogger], Any]) -> None:
    """Run a command body with a run ID, mapping errors to JSON and exit codes."""
    run_id = make_run_id(command)
    configure_logging(ctx.obj["log_level"], ctx.obj["log_format"], run_id)
    log = RunLogger(logger, run_id)
    log.info(f"Starting {command}")
    try:
        result = action(log)
    except Exception as e:
        error = e if isinstance(e, FeastError) else FeastError("UNEXPECTED_ERROR", str(e))
        log.error(f"❌ {command} failed: {error.code}: {error.message}", exc_info=error is not e)
        click.echo(json.dumps(error.to_dict(), sort_keys=True), err=True)
        ctx.exit(exit_code_for(error))
        return
    if result is not None:
        _echo_json(result)
    log.info(f"✅ {command} done")


def _load_config(path: Path, seed: Optional[int] = None) -> ExperimentConfig:
    config = ExperimentConfig.from_file(path)
    return config.with_overrides(seed=seed) if seed is not None else config


def _parse_sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(
            "Invalid --sizes", field_errors=[{"key": "sizing.sizes", "reason": str(e)}]
        ) from e


config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(path_type=Path),
    required=True,
    help="key=value experiment config",
)
seed_option = click.option("--seed", type=int, default=None, help="Override feast/classify seed")


# ============================================================================
# Commands
# ============================================================================


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="INFO",
    show_default=True,
)
@click.option(
    "--log-format", type=click.Choice(["text", "json"]), default="text", show_default=True
)
@click.pass_context
def main(ctx: click.Context, log_level: str, log_format: str) -> None:
    """Event-based feature extraction with adaptive selection thresholds."""
    ctx.ensure_object(dict)
    ctx.obj["log_level"] = log_level
    ctx.obj["log_format"] = log_format


@main.command()
@config_option
@seed_option
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Output directory")
@click.pass_context
def train(ctx: click.Context, config_path: Path, seed: Optional[int], out: Path) -> None:
    """Train feature networks; write features.json and monitor CSVs."""

    def action(log: RunLogger) -> dict[str, Any]:
        artifacts = cmd_train(_load_config(config_path, seed), out)
        return {
            "features": str(artifacts.features_path),
            "monitor": {k: str(v) for k, v in artifacts.monitor_paths.items()},
            "converged_at": artifacts.converged_at,
            "n_events": artifacts.result.n_events,
            "n_missed": artifacts.result.n_missed,
        }

    _run(ctx, "train", action)


@main.command()
@config_option
@click.option("--features", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Feature-event CSV")
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.pass_context
def infer(ctx: click.Context, config_path: Path, features: Path, out: Path, split: str) -> None:
    """Assign every event to its nearest feature."""

    def action(log: RunLogger) -> dict[str, Any]:
        path = cmd_infer(_load_config(config_path), features, out, split)  # type: ignore[arg-type]
        return {"feature_events": str(path)}

    _run(ctx, "infer", action)


@main.command()
@config_option
@seed_option
@click.option("--features", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Metrics JSON")
@click.option("--random-baseline", is_flag=True, help="Use untrained features of the same shape")
@click.option("--classifier-out", type=click.Path(path_type=Path), default=None)
@click.pass_context
def evaluate(
    ctx: click.Context,
    config_path: Path,
    seed: Optional[int],
    features: Path,
    out: Path,
    random_baseline: bool,
    classifier_out: Optional[Path],
) -> None:
    """Classify with stored features; write accuracy, confusion and Gini."""

    def action(log: RunLogger) -> dict[str, Any]:
        return cmd_evaluate(
            _load_config(config_path, seed), features, out, random_baseline, classifier_out
        )

    _run(ctx, "evaluate", action)


@main.command()
@config_option
@click.option("--trials", type=int, default=3, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_context
def compare(ctx: click.Context, config_path: Path, trials: int, out: Path) -> None:
    """Raw events vs random features vs trained features."""

    def action(log: RunLogger) -> dict[str, Any]:
        return cmd_compare(_load_config(config_path), trials, out)

    _run(ctx, "compare", action)


@main.command("size-sweep")
@config_option
@seed_option
@click.option("--sizes", default=None, help="Comma-separated sizes, e.g. 10,25,50,100")
@click.option("--trials", type=int, default=None, help="Networks per size")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Sweep CSV")
@click.pass_context
def size_sweep_command(
    ctx: click.Context,
    config_path: Path,
    seed: Optional[int],
    sizes: Optional[str],
    trials: Optional[int],
    out: Path,
) -> None:
    """Choose a network size from noise-feature counts."""

    def action(log: RunLogger) -> dict[str, Any]:
        overrides: dict[str, str] = {}
        if sizes is not None:
            overrides["sizing.sizes"] = ",".join(str(s) for s in _parse_sizes(sizes))
        if trials is not None:
            overrides["sizing.trials"] = str(trials)
        config = _load_config(config_path, seed).with_overrides(overrides=overrides)
        result = cmd_size_sweep(config, out)
        return {
            "chosen_size": result.chosen_size,
            "flag": result.flag.value if result.flag else None,
            "sweep": str(out),
        }

    _run(ctx, "size-sweep", action)


@main.command("gini-study")
@config_option
@click.option("--n-configs", type=int, default=None, help="Random configurations")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Study CSV")
@click.pass_context
def gini_study(
    ctx: click.Context, config_path: Path, n_configs: Optional[int], seed: int, out: Path
) -> None:
    """Gini of inference feature counts vs accuracy over random feature sets."""

    def action(log: RunLogger) -> dict[str, Any]:
        config = _load_config(config_path)
        n = n_configs if n_configs is not None else config.gini_study.n_configs
        result = cmd_gini_study(config, n, seed, out)
        return {"rows": len(result.rows), "spearman": result.spearman, "study": str(out)}

    _run(ctx, "gini-study", action)


@main.command()
@click.option("--log", "log_path", type=click.Path(path_type=Path), required=True)
@click.option("--window-k", type=int, default=50, show_default=True)
@click.option("--epsilon-rel", type=float, default=0.1, show_default=True)
@click.option("--smooth", type=int, default=1, show_default=True, help="Moving average length")
@click.pass_context
def monitor(
    ctx: click.Context, log_path: Path, window_k: int, epsilon_rel: float, smooth: int
) -> None:
    """Convergence report for a monitor CSV."""

    def action(log: RunLogger) -> dict[str, Any]:
        return monitor_report(log_path, window_k, epsilon_rel, smooth).model_dump()

    _run(ctx, "monitor", action)


@main.command("dump-surface")
@config_option
@click.option("--events", "n_events", type=int, required=True, help="Events to apply")
@click.option("--channel", type=click.Choice(["ON", "OFF"]), default="ON", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_context
def dump_surface_command(
    ctx: click.Context, config_path: Path, n_events: int, channel: str, out: Path
) -> None:
    """Write a time-surface frame as a CSV grid."""

    def action(log: RunLogger) -> dict[str, Any]:
        path = dump_surface(_load_config(config_path), n_events, Channel[channel], out)
        return {"surface": str(path)}

    _run(ctx, "dump-surface", action)


@main.command("dump-features")
@click.option("--features", type=click.Path(path_type=Path), required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.pass_context
def dump_features_command(ctx: click.Context, features: Path, out_dir: Path) -> None:
    """Write one CSV grid per feature."""

    def action(log: RunLogger) -> dict[str, Any]:
        return {"grids": len(dump_features(features, out_dir)), "out_dir": str(out_dir)}

    _run(ctx, "dump-features", action)


@main.command()
@click.option("--url", required=True, help="Archive URL")
@click.option("--dest", type=click.Path(path_type=Path), required=True)
@click.option("--max-retries", type=int, default=3, show_default=True)
@click.pass_context
def fetch(ctx: click.Context, url: str, dest: Path, max_retries: int) -> None:
    """Download and unpack a dataset archive."""

    def action(log: RunLogger) -> dict[str, Any]:
        root = asyncio.run(fetch_archive(url, dest, max_retries=max_retries))
        return {"dest": str(root)}

    _run(ctx, "fetch", action)


if __name__ == "__main__":
    main()
