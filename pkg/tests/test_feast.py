"""
Tests for adaptive-threshold feature learning.
"""

import numpy as np
import pytest

from feast_events.errors import ParameterError, ShapeMismatchError
from feast_events.events import (
    Event,
    EventStream,
    ShapeKind,
    ShapeSpec,
    synth_noise,
    synth_pattern_stream,
)
from feast_events.feast import (
    MAX_THRESHOLD,
    FeastModel,
    FeastNetwork,
    FeastParams,
    FeatureEventStream,
    MatchOutcome,
    ThresholdInit,
    cosine_distance,
    infer_step,
    infer_stream,
    init_model,
    init_network,
    match,
    train_recordings,
    train_step,
    train_stream,
)
from feast_events.sizing import is_noise_feature
from feast_events.surface import Channel, Descriptor, SurfaceParams


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _network(weights, thresholds, **params):
    weights = np.array([_unit(w) for w in weights])
    p = FeastParams(n_features=len(weights), roi_w=1 if weights.shape[1] == 1 else 3, **params)
    return FeastNetwork(p, weights, thresholds)


def _basis(i, dim=9):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


# =============================================================================
# Initialization
# =============================================================================


class TestInit:
    def test_weights_are_unit_norm(self):
        net = init_network(FeastParams(n_features=10, roi_w=5), seed=1)

        np.testing.assert_allclose(np.linalg.norm(net.weights, axis=1), 1.0)
        assert net.weights.shape == (10, 25)

    def test_uniform_thresholds(self):
        net = init_network(FeastParams(n_features=200), seed=2)

        assert net.thresholds.min() >= 0.0
        assert net.thresholds.max() <= 1.0

    def test_gaussian_thresholds_are_clamped(self):
        params = FeastParams(
            n_features=500,
            threshold_init=ThresholdInit.GAUSSIAN,
            threshold_init_value=0.1,
            threshold_init_std=1.0,
        )
        net = init_network(params, seed=3)

        assert net.thresholds.min() == 0.0
        assert net.thresholds.max() <= MAX_THRESHOLD

    def test_constant_thresholds(self):
        params = FeastParams(
            n_features=4, threshold_init=ThresholdInit.CONSTANT, threshold_init_value=0.3
        )

        np.testing.assert_array_equal(init_network(params, seed=0).thresholds, [0.3] * 4)

    def test_deterministic_per_seed(self):
        params = FeastParams(n_features=6, roi_w=3)
        a, b, c = init_network(params, 9), init_network(params, 9), init_network(params, 10)

        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.thresholds, b.thresholds)
        assert not np.array_equal(a.weights, c.weights)

    def test_shape_checks(self):
        params = FeastParams(n_features=2, roi_w=3)

        with pytest.raises(ShapeMismatchError):
            FeastNetwork(params, np.ones((2, 4)), np.zeros(2))
        with pytest.raises(ShapeMismatchError):
            FeastNetwork(params, np.ones((2, 9)), np.zeros(3))

    def test_params_reject_even_roi(self):
        with pytest.raises(ValueError):
            FeastParams(n_features=2, roi_w=6)

    def test_init_model_channels_differ(self):
        params = FeastParams(n_features=3, roi_w=3)
        model = init_model({Channel.ON: params, Channel.OFF: params}, seed=0)

        assert model.sizes == (3, 3)
        assert not np.array_equal(
            model.networks[Channel.ON].weights, model.networks[Channel.OFF].weights
        )

    def test_model_requires_shared_roi(self):
        on = init_network(FeastParams(n_features=2, roi_w=3), 0, Channel.ON)
        off = init_network(FeastParams(n_features=2, roi_w=5), 0, Channel.OFF)

        with pytest.raises(ParameterError):
            FeastModel({Channel.ON: on, Channel.OFF: off})

    def test_random_like_matches_sizes(self):
        params = FeastParams(n_features=4, roi_w=3)
        model = init_model({Channel.ON: params}, seed=1)
        twin = model.random_like(seed=1)

        assert twin.sizes == model.sizes
        np.testing.assert_array_equal(
            twin.networks[Channel.ON].weights, model.networks[Channel.ON].weights
        )


# =============================================================================
# Matching and updates
# =============================================================================


class TestMatching:
    def test_cosine_distance(self):
        assert cosine_distance(_basis(0), _basis(0)) == 0.0
        assert cosine_distance(_basis(0), _basis(1)) == 1.0
        assert cosine_distance(_basis(0), -_basis(0)) == 2.0

    def test_nearest_qualifying_feature_wins(self):
        net = _network([_basis(0), _basis(0) + 0.5 * _basis(1)], [1.0, 1.0])

        result = match(net, _unit(_basis(0) + 0.4 * _basis(1)))
        assert result.outcome is MatchOutcome.WIN
        assert result.feature_index == 1

    def test_threshold_excludes_nearer_feature(self):
        net = _network([_basis(0), _basis(0) + _basis(1)], [0.5, 0.0])

        result = match(net, _unit(_basis(0) + _basis(1) * 0.9))
        assert result.feature_index == 0

    def test_ties_go_to_lowest_index(self):
        net = _network([_basis(0), _basis(0), _basis(0)], [0.5, 0.5, 0.5])

        assert match(net, _basis(0)).feature_index == 0

    def test_miss(self):
        net = _network([_basis(0), _basis(1)], [0.1, 0.1])

        assert not match(net, _basis(2)).is_win

    def test_win_updates_only_the_winner(self):
        net = _network([_basis(0), _basis(1)], [0.5, 0.5], eta=0.1, delta_dec=0.01)
        before = net.copy()
        x = _unit(_basis(0) + 0.2 * _basis(2))

        result = train_step(net, x)

        assert result.feature_index == 0
        expected = 0.9 * before.weights[0] + 0.1 * x
        np.testing.assert_allclose(net.weights[0], expected / np.linalg.norm(expected))
        assert net.thresholds[0] == pytest.approx(0.49)
        np.testing.assert_array_equal(net.weights[1], before.weights[1])
        assert net.thresholds[1] == 0.5
        assert net.win_counts.tolist() == [1, 0]

    def test_win_pulls_winner_toward_descriptor(self, rng):
        for _ in range(200):
            eta = float(rng.uniform(0.01, 0.99))
            net = _network([rng.standard_normal(9)], [MAX_THRESHOLD], eta=eta)
            d = _unit(np.abs(rng.standard_normal(9)))
            before = cosine_distance(net.weights[0], d)

            assert train_step(net, d).is_win
            assert cosine_distance(net.weights[0], d) < before

    def test_miss_expands_every_threshold(self):
        net = _network([_basis(0), -_basis(2)], [0.1, 1.999], delta_inc=0.01)

        result = train_step(net, _basis(2))

        assert not result.is_win
        np.testing.assert_allclose(net.thresholds, [0.11, MAX_THRESHOLD])

    def test_threshold_floor_is_zero(self):
        net = _network([_basis(0)], [0.0005], delta_dec=0.001)

        train_step(net, _basis(0))
        assert net.thresholds[0] == 0.0

    def test_accepts_descriptor_models(self):
        net = _network([_basis(4)], [0.5])
        d = Descriptor(values=_basis(4), source_event=Event(x=1, y=1, t=42, p=1))

        assert train_step(net, d).feature_index == 0
        fe = infer_step(net, d)
        assert (fe.feature, fe.t, fe.channel) == (0, 42, Channel.ON)

    def test_infer_ignores_thresholds(self):
        net = _network([_basis(0), _basis(1)], [0.0, 0.0])
        d = Descriptor(
            values=_unit(_basis(1) + 0.1 * _basis(0)), source_event=Event(x=0, y=0, t=1, p=1)
        )

        assert infer_step(net, d).feature == 1


# =============================================================================
# Streams
# =============================================================================


def _bar_stream(seed=0, duration_us=40_000, noise=0.0):
    spec = ShapeSpec(kind=ShapeKind.BAR, size=5, direction_deg=0.0)
    return synth_pattern_stream([spec], (1000.0, 1000.0), duration_us, noise, seed, 16, 16)


class TestStreams:
    def test_train_counts_events(self):
        stream = _bar_stream()
        net = init_network(FeastParams(n_features=4, roi_w=3), seed=0)

        result = train_stream(net, stream, SurfaceParams(roi_w=3, tau_us=2000.0), monitor_period=10)

        assert result.n_events == len(stream)
        assert len(result.feature_events) == result.n_events - result.n_missed
        assert len(result.monitor_log) == len(stream) // 10
        assert result.network is net

    def test_training_is_deterministic(self):
        stream = _bar_stream(noise=2.0)
        params = FeastParams(n_features=4, roi_w=3)
        surface = SurfaceParams(roi_w=3, tau_us=2000.0)

        a = train_stream(init_network(params, 5), stream, surface)
        b = train_stream(init_network(params, 5), stream, surface)

        np.testing.assert_array_equal(a.network.weights, b.network.weights)
        assert a.feature_events == b.feature_events

    def test_weights_stay_normalized(self):
        net = init_network(FeastParams(n_features=6, roi_w=3, eta=0.2), seed=1)
        train_stream(net, _bar_stream(noise=5.0), SurfaceParams(roi_w=3, tau_us=2000.0), epochs=2)

        np.testing.assert_allclose(np.linalg.norm(net.weights, axis=1), 1.0)
        assert np.all((net.thresholds >= 0) & (net.thresholds <= MAX_THRESHOLD))

    def test_roi_mismatch(self):
        net = init_network(FeastParams(n_features=2, roi_w=3), seed=0)

        with pytest.raises(ParameterError):
            train_stream(net, _bar_stream(), SurfaceParams(roi_w=5))

    def test_epochs_must_be_positive(self):
        net = init_network(FeastParams(n_features=2, roi_w=3), seed=0)

        with pytest.raises(ParameterError):
            train_stream(net, _bar_stream(), SurfaceParams(roi_w=3), epochs=0)

    def test_missed_replays_reduce_misses(self):
        params = FeastParams(
            n_features=3, roi_w=3, threshold_init=ThresholdInit.CONSTANT, threshold_init_value=0.0
        )
        surface = SurfaceParams(roi_w=3, tau_us=2000.0)
        stream = _bar_stream()

        plain = init_network(params, 0)
        replayed = init_network(params, 0)
        train_stream(plain, stream, surface)
        train_stream(replayed, stream, surface, missed_replays=3)

        assert replayed.win_counts.sum() > plain.win_counts.sum()

    def test_two_channel_model(self):
        stream = EventStream(
            width=5, height=5, x=[1, 2, 3, 2], y=[1, 2, 3, 2], t=[0, 1, 2, 3], p=[1, -1, 1, -1]
        )
        params = FeastParams(n_features=2, roi_w=3)
        model = init_model({Channel.ON: params, Channel.OFF: params}, seed=0)

        result = train_stream(model, stream, SurfaceParams(roi_w=3))

        assert result.n_events == 4
        assert set(result.monitor_logs) == {Channel.ON, Channel.OFF}
        with pytest.raises(ParameterError):
            _ = result.network

    def test_single_channel_skips_other_polarity(self):
        stream = EventStream(width=5, height=5, x=[1, 2], y=[1, 2], t=[0, 1], p=[1, -1])
        net = init_network(FeastParams(n_features=2, roi_w=3), seed=0, channel=Channel.ON)

        assert train_stream(net, stream, SurfaceParams(roi_w=3)).n_events == 1
        assert len(infer_stream(net, stream, SurfaceParams(roi_w=3))) == 1

    def test_infer_emits_one_event_per_input(self):
        stream = _bar_stream(noise=3.0)
        params = FeastParams(n_features=5, roi_w=3)
        model = init_model({Channel.ON: params, Channel.OFF: params}, seed=2)
        before = model.copy()

        out = infer_stream(model, stream, SurfaceParams(roi_w=3, tau_us=2000.0))

        assert len(out) == len(stream)
        np.testing.assert_array_equal(out.t, stream.t)
        assert out.feature.max() < 5
        # inference leaves the networks untouched
        for ch in (Channel.ON, Channel.OFF):
            np.testing.assert_array_equal(model.networks[ch].weights, before.networks[ch].weights)
            np.testing.assert_array_equal(
                model.networks[ch].thresholds, before.networks[ch].thresholds
            )

    def test_infer_on_noise_picks_noise_features(self):
        """Test background activity is mostly assigned to center-only features."""
        center = np.zeros(25)
        center[12] = 1.0
        bar = np.zeros((5, 5))
        bar[:, 2] = 1.0
        edge = np.zeros((5, 5))
        edge[2, :] = 1.0
        weights = np.array([_unit(bar.ravel()), center, _unit(edge.ravel())])
        net = FeastNetwork(FeastParams(n_features=3, roi_w=5), weights, [0.0] * 3)
        noisy = [i for i, w in enumerate(net.weights) if is_noise_feature(w, 5)]
        stream = synth_noise(
            duration_us=1_000_000, noise_rate_hz_per_pixel=5.0, seed=4, width=16, height=16
        )

        out = infer_stream(net, stream, SurfaceParams(roi_w=5, tau_us=500.0))

        assert noisy == [1]
        assert np.count_nonzero(out.feature == 1) > len(out) / 2

    def test_train_recordings_keeps_learning_across_recordings(self):
        params = FeastParams(n_features=3, roi_w=3)
        model = init_model({Channel.ON: params}, seed=0)
        streams = [_bar_stream(seed=s, noise=1.0) for s in range(3)]

        result = train_recordings(model, streams, SurfaceParams(roi_w=3, tau_us=2000.0))

        # ON-only model: OFF noise events are skipped
        assert result.n_events == sum(int((s.p > 0).sum()) for s in streams)
        assert result.n_events < sum(len(s) for s in streams)


def test_feature_event_stream_counts():
    """Test global indices put OFF features after ON features."""
    fes = FeatureEventStream.from_lists([0, 1, 0, 2], [1, 2, 3, 4], [0, 0, 1, 1], (2, 3))

    assert fes.global_index().tolist() == [0, 1, 2, 4]
    assert fes.feature_counts().tolist() == [1, 1, 1, 0, 1]
    assert fes.events()[2].channel is Channel.OFF
