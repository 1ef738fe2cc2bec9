"""
Tests for the experiment drivers, the learning-rule invariants over long
randomized runs, and the slow end-to-end acceptance runs.

Slow runs are deselected by default; run them with `pytest -m slow`. The
N-MNIST run also needs FEAST_NMNIST_ROOT pointing at an unpacked dataset.
"""

import os

import numpy as np
import pytest

from feast_events.config import ExperimentConfig
from feast_events.datasets import synth_stationary_stream
from feast_events.events import merge_streams, synth_noise
from feast_events.experiments import (
    build_model,
    cmd_compare,
    cmd_gini_study,
    compare_feature_sources,
    load_recordings,
    random_study_config,
)
from feast_events.feast import (
    FeastParams,
    ThresholdInit,
    init_network,
    train_step,
    train_stream,
)
from feast_events.monitor import detect_convergence, gini
from feast_events.sizing import count_noise_features, size_sweep
from feast_events.surface import Channel, SurfaceParams


# =============================================================================
# Drivers
# =============================================================================


class TestDrivers:
    def test_splits_are_distinct_and_stable(self, small_config):
        train = load_recordings(small_config, "train")
        test = load_recordings(small_config, "test")

        assert (len(train), len(test)) == (6, 4)
        assert train[0].stream != test[0].stream
        assert load_recordings(small_config, "train")[0].stream == train[0].stream

    def test_random_study_config_ranges(self, small_config):
        rng = np.random.default_rng(0)
        g = small_config.gini_study

        for _ in range(20):
            config, fraction = random_study_config(small_config, rng)
            assert config.surface.roi_w in g.roi_choices
            assert g.n_features_min <= config.feast.n_features <= g.n_features_max
            assert g.tau_min_us <= config.surface.tau_us <= g.tau_max_us
            assert g.eta_min <= config.feast.eta <= g.eta_max
            assert g.train_fraction_min <= fraction <= g.train_fraction_max
            assert config.feast.n_features_off is None

    def test_random_baseline_is_the_untrained_initialization(self, small_config):
        a = build_model(small_config)
        b = build_model(small_config).random_like(small_config.feast.seed)

        for ch in (Channel.ON, Channel.OFF):
            np.testing.assert_array_equal(a.networks[ch].weights, b.networks[ch].weights)

    def test_compare_sources(self, small_config):
        summary = compare_feature_sources(small_config, trials=2)

        assert set(summary) == {"raw", "random", "feast"}
        assert all(len(s.accuracies) == 2 for s in summary.values())
        assert all(0.0 <= a <= 1.0 for s in summary.values() for a in s.accuracies)
        # raw inputs do not depend on the feature seed
        assert summary["raw"].accuracies[0] == summary["raw"].accuracies[1]
        assert summary["raw"].std == 0.0

    def test_cmd_compare_writes_payload(self, small_config, tmp_path):
        payload = cmd_compare(small_config, 1, tmp_path / "compare.json")

        assert payload["trials"] == 1
        assert set(payload["sources"]) == {"raw", "random", "feast"}
        assert (tmp_path / "compare.json").exists()

    def test_gini_study_is_deterministic(self, small_config, tmp_path):
        a = cmd_gini_study(small_config, 2, seed=5, out=tmp_path / "a.csv")
        b = cmd_gini_study(small_config, 2, seed=5, out=tmp_path / "b.csv")

        assert a == b
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# =============================================================================
# Learning-rule invariants
# =============================================================================


def _random_descriptors(rng, n, dim):
    d = np.abs(rng.standard_normal((n, dim)))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _check_invariants(n_steps, seed):
    rng = np.random.default_rng(seed)
    params = FeastParams(n_features=6, roi_w=3, eta=0.05, delta_inc=0.01, delta_dec=0.005)
    net = init_network(params, seed=seed)

    for d in _random_descriptors(rng, n_steps, params.dim):
        w_before = net.weights.copy()
        thr_before = net.thresholds.copy()
        dist = np.array([min(max(1.0 - float(np.dot(w, d)), 0.0), 2.0) for w in w_before])
        qualifying = np.flatnonzero(dist <= thr_before)

        result = train_step(net, d)

        changed = np.flatnonzero(np.any(net.weights != w_before, axis=1))
        if result.is_win:
            assert qualifying.size > 0
            assert dist[result.feature_index] <= dist[qualifying].min() + 1e-12
            assert set(changed.tolist()) <= {result.feature_index}
            others = np.arange(params.n_features) != result.feature_index
            np.testing.assert_array_equal(net.thresholds[others], thr_before[others])
            assert net.thresholds[result.feature_index] == pytest.approx(
                max(0.0, thr_before[result.feature_index] - params.delta_dec)
            )
            if dist[result.feature_index] > 1e-9:
                # the winner moves toward the descriptor
                after = 1.0 - float(np.dot(net.weights[result.feature_index], d))
                assert after < dist[result.feature_index]
        else:
            assert qualifying.size == 0
            assert changed.size == 0
            np.testing.assert_allclose(
                net.thresholds, np.minimum(thr_before + params.delta_inc, 2.0)
            )
        assert np.all(np.abs(np.linalg.norm(net.weights, axis=1) - 1.0) < 1e-9)
        assert np.all((net.thresholds >= 0.0) & (net.thresholds <= 2.0))


def test_learning_rule_invariants():
    """Test single updates, nearest qualifying wins, attraction and bounded unit weights."""
    _check_invariants(5_000, seed=0)


@pytest.mark.slow
def test_learning_rule_invariants_long_run():
    """The same invariants over a long randomized run."""
    _check_invariants(100_000, seed=1)


def test_no_misses_while_thresholds_are_wide():
    """Test a network that starts at the widest threshold misses nothing early."""
    stream = synth_stationary_stream(4, n_events_target=500, segment_us=20_000, seed=0)
    params = FeastParams(
        n_features=4,
        roi_w=5,
        threshold_init=ThresholdInit.CONSTANT,
        threshold_init_value=2.0,
    )
    net = init_network(params, seed=0)

    result = train_stream(net, stream, SurfaceParams(roi_w=5, tau_us=5000.0), monitor_period=50)

    assert result.monitor_log.samples[0].missed_rate == 0.0


# =============================================================================
# Acceptance runs
# =============================================================================

ONE_MILLION = 1_000_000


def _with_on_noise(patterns, fraction, seed):
    """`patterns` plus ON background events making up `fraction` of the result."""
    duration = int(patterns.t[-1]) + 1
    on_events = fraction / (1.0 - fraction) * len(patterns)
    # synth_noise draws both polarities; only the ON half is kept
    rate = 2.0 * on_events / (duration * 1e-6 * patterns.width * patterns.height)
    noise = synth_noise(
        duration_us=duration,
        noise_rate_hz_per_pixel=rate,
        seed=seed,
        width=patterns.width,
        height=patterns.height,
    )
    return merge_streams([patterns, noise.select(noise.p > 0)])


@pytest.fixture(scope="module")
def homeostasis_run():
    stream = synth_stationary_stream(8, n_events_target=ONE_MILLION, segment_us=50_000, seed=3)
    net = init_network(FeastParams(n_features=8, roi_w=7, eta=0.01), seed=0)
    return train_stream(net, stream, SurfaceParams(roi_w=7, tau_us=10_000.0))


@pytest.fixture(scope="module")
def noisy_run():
    patterns = synth_stationary_stream(8, n_events_target=ONE_MILLION, segment_us=50_000, seed=3)
    stream = _with_on_noise(patterns, 0.1, seed=4)
    params = FeastParams(
        n_features=8,
        roi_w=7,
        eta=0.01,
        threshold_init=ThresholdInit.CONSTANT,
        threshold_init_value=2.0,
    )
    net = init_network(params, seed=0)
    return train_stream(net, stream, SurfaceParams(roi_w=7, tau_us=10_000.0))


@pytest.mark.slow
def test_homeostasis_balances_feature_use(homeostasis_run):
    """Eight features on eight equiprobable patterns end up used about equally."""
    late = homeostasis_run.feature_events.feature[len(homeostasis_run.feature_events) // 2 :]

    assert gini(np.bincount(late, minlength=8)) < 0.2
    assert homeostasis_run.monitor_log.column("missed_rate")[-100:].mean() < 0.05


@pytest.mark.slow
def test_noisy_run_starts_without_misses(noisy_run):
    """Thresholds start at their maximum, so the first monitoring window has no misses."""
    assert noisy_run.monitor_log.samples[0].missed_rate == 0.0


@pytest.mark.slow
def test_noisy_run_threshold_change_rises_then_declines(noisy_run):
    signal = noisy_run.monitor_log.column("d_thresholds")
    smoothed = np.convolve(signal, np.ones(20) / 20, mode="valid")
    peak = int(np.argmax(smoothed))

    assert signal[0] > 0.0
    assert peak < 3 * len(smoothed) // 4
    assert smoothed[-len(smoothed) // 10 :].mean() < 0.75 * smoothed[peak]


@pytest.mark.slow
def test_noisy_run_converges(noisy_run):
    """The monitor signals plateau before the stream ends."""
    at = detect_convergence(noisy_run.monitor_log, window_k=20, epsilon_rel=0.3, smooth=100)

    assert at is not None
    assert at < noisy_run.monitor_log.samples[-1].event_index


@pytest.mark.slow
def test_pure_noise_learns_noise_features():
    """Nearly every feature trained on background activity is center-only."""
    stream = synth_noise(duration_us=4_000_000, noise_rate_hz_per_pixel=5.0, seed=2)
    net = init_network(FeastParams(n_features=25, roi_w=5, eta=0.05), seed=0)

    train_stream(net, stream, SurfaceParams(roi_w=5, tau_us=500.0))

    assert count_noise_features(net) >= 24


@pytest.mark.slow
def test_noise_features_on_noisy_patterns():
    """Noise features appear in moderation and grow with network size."""
    patterns = synth_stationary_stream(8, n_events_target=100_000, segment_us=50_000, seed=5)
    stream = _with_on_noise(patterns, 0.1, seed=6)
    params = FeastParams(n_features=8, roi_w=7, eta=0.01)
    surface = SurfaceParams(roi_w=7, tau_us=5000.0)

    sweep = size_sweep(stream, [8, 12, 24, 48], params, surface, trials_per_size=5, seed=0)

    means = {row.size: row.mean for row in sweep.rows}
    assert 1.0 <= means[12] <= 6.0
    assert means[8] <= means[12] <= means[24] <= means[48]


@pytest.mark.slow
def test_gini_predicts_accuracy(tmp_path):
    """Across random feature sets, lower inference Gini goes with higher accuracy."""
    config = ExperimentConfig.from_mapping(
        {
            "dataset.n_classes": "4",
            "dataset.train_per_class": "10",
            "dataset.test_per_class": "5",
            "dataset.duration_us": "50000",
            "classify.type": "linear",
            "feast.channels": "ON",
        }
    )

    result = cmd_gini_study(config, 30, seed=0, out=tmp_path / "study.csv")

    assert result.spearman is not None
    assert result.spearman <= -0.4


@pytest.mark.slow
@pytest.mark.nmnist
def test_nmnist_trained_features_beat_random():
    """On desk-scale N-MNIST, trained features beat untrained ones by 3 points."""
    root = os.environ.get("FEAST_NMNIST_ROOT")
    if not root:
        pytest.skip("FEAST_NMNIST_ROOT is not set")
    config = ExperimentConfig.from_mapping(
        {
            "dataset.kind": "nmnist",
            "dataset.path": root,
            "dataset.train_limit": "10000",
            "dataset.test_limit": "2000",
            "feast.n_features": "100",
            "classify.hidden": "1000",
        }
    )

    summary = compare_feature_sources(config, trials=1)

    assert summary["feast"].mean - summary["random"].mean >= 0.03
