import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import decayed_mass
from sparsecache.distribution import synth_distribution
from sparsecache.errors import BadDecay, DepthOutOfRange, InputError, NoSamples
from sparsecache.estimator import (
    EstimatorState,
    bias_bound,
    observe,
    sample_weights,
    snapshot,
    tracking_bias,
    variance_term,
)


@pytest.mark.parametrize("decay", [0.3, 0.99, 1.0])
def test_single_observation_is_point_mass(decay):
    s = observe(EstimatorState(5, decay), 3)
    np.testing.assert_array_equal(snapshot(s).mass, [0, 0, 1, 0, 0])


def test_half_decay_example():
    s = EstimatorState(5, 0.5).observe_many([2, 2, 5])
    np.testing.assert_allclose(sample_weights(0.5, 3), [1 / 7, 2 / 7, 4 / 7])
    np.testing.assert_allclose(s.snapshot().mass, [0, 3 / 7, 0, 0, 4 / 7], atol=1e-15)
    np.testing.assert_allclose(s.snapshot().mass, decayed_mass([2, 2, 5], 5, 0.5), atol=1e-15)


def test_empirical_example():
    s = EstimatorState(4, 1.0).observe_many([1, 1, 2, 2])
    np.testing.assert_array_equal(s.snapshot().mass, [0.5, 0.5, 0, 0])


def test_order_sensitivity():
    a = EstimatorState(3, 0.8).observe_many([1, 2]).snapshot().mass
    b = EstimatorState(3, 0.8).observe_many([2, 1]).snapshot().mass
    np.testing.assert_allclose(a, decayed_mass([1, 2], 3, 0.8))
    np.testing.assert_allclose(b, decayed_mass([2, 1], 3, 0.8))
    assert not np.allclose(a, b)


@given(st.lists(st.integers(1, 9), min_size=1, max_size=50), st.randoms())
def test_order_insensitivity_without_decay(depths, rnd):
    shuffled = list(depths)
    rnd.shuffle(shuffled)
    a = EstimatorState(9, 1.0).observe_many(depths).snapshot().mass
    b = EstimatorState(9, 1.0).observe_many(shuffled).snapshot().mass
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_errors():
    with pytest.raises(NoSamples):
        EstimatorState(4).snapshot()
    with pytest.raises(DepthOutOfRange):
        EstimatorState(4).observe(0)
    with pytest.raises(DepthOutOfRange):
        EstimatorState(4).observe(5, clamp=False)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(BadDecay):
            EstimatorState(4, bad)
    with pytest.raises(InputError):
        EstimatorState(0)


def test_clamping():
    s = EstimatorState(4, 1.0).observe_many([2, 9, 4])
    assert s.clamped == 1
    np.testing.assert_allclose(s.snapshot().mass, [0, 1 / 3, 0, 2 / 3])


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(1, 30), min_size=1, max_size=2000),
    st.floats(0.5, 0.999),
)
def test_global_scale_matches_definition(depths, decay):
    s = EstimatorState(30, decay).observe_many(depths)
    np.testing.assert_allclose(s.snapshot().mass, decayed_mass(depths, 30, decay), atol=1e-9)
    t = len(depths)
    assert s.weight_total == pytest.approx((1 - decay**t) / (1 - decay), rel=1e-9)
    assert s.weights.sum() == pytest.approx(s.weight_total, rel=1e-9)


def test_definition_on_long_stream():
    rng = np.random.default_rng(0)
    depths = rng.integers(1, 51, size=10_000)
    s = EstimatorState(50, 0.97).observe_many(depths)
    np.testing.assert_allclose(s.snapshot().mass, decayed_mass(depths, 50, 0.97), atol=1e-9)


def test_million_observations_stay_finite():
    rng = np.random.default_rng(1)
    s = EstimatorState(64, 0.99)
    for d in rng.integers(1, 65, size=1_000_000):
        s.observe(d)
    w = s.weights
    assert np.all(np.isfinite(w)) and np.all(s._raw < 1e300)
    assert abs(s.snapshot().mass.sum() - 1) < 1e-9
    assert s.weight_total == pytest.approx(1 / (1 - 0.99), rel=1e-9)
    assert w.sum() == pytest.approx(s.weight_total, rel=1e-9)


def test_state_round_trip():
    s = EstimatorState(6, 0.9).observe_many([1, 6, 6, 3])
    t = EstimatorState.from_dict(s.to_dict())
    np.testing.assert_allclose(t.snapshot().mass, s.snapshot().mass)
    assert t.sample_count == 4 and t.weight_total == pytest.approx(s.weight_total)
    t.observe(2)
    s.observe(2)
    np.testing.assert_allclose(t.snapshot().mass, s.snapshot().mass)
    with pytest.raises(InputError):
        EstimatorState.from_dict({"n": 2, "gamma": 0.9, "weights": [1], "count": 1})


def test_copy_is_independent():
    s = EstimatorState(3, 0.9).observe_many([1, 2])
    c = s.copy()
    c.observe(3)
    assert s.sample_count == 2 and s.snapshot().mass[2] == 0


def test_variance_term_examples():
    for gamma in (0.1, 0.5, 0.99):
        assert variance_term(gamma, 1, 100) == pytest.approx(10.0)
    assert variance_term(0.99, 10**6, 100) == pytest.approx(math.sqrt(100 * 0.01 / 1.99), rel=1e-9)
    assert variance_term(0.99, 10**6, 100) == pytest.approx(0.709, abs=5e-4)
    with pytest.raises(BadDecay):
        variance_term(1.0, 5, 10)


@given(st.floats(0.05, 0.995), st.integers(1, 2000), st.integers(1, 500))
def test_variance_term_matches_weight_norm_and_decreases(gamma, t, n):
    w = sample_weights(gamma, t)
    assert w.sum() == pytest.approx(1.0)
    assert variance_term(gamma, t, n) == pytest.approx(math.sqrt(n * float(np.sum(w**2))), rel=1e-9)
    if gamma**t > 1e-12:
        assert variance_term(gamma, t + 1, n) < variance_term(gamma, t, n)


def test_bias_bound_examples():
    assert bias_bound(0.0, 0.9) == 0
    assert bias_bound(0.01, 0.99) == pytest.approx(0.99)
    assert bias_bound(5.0, 1e-12) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(BadDecay):
        bias_bound(0.1, 1.0)


def test_tracking_bias_definition_and_bound():
    start = synth_distribution("head_heavy", 40)
    end = synth_distribution("end_spike", 40)
    steps = 300
    delta = 0.01
    gap = np.abs(end.mass - start.mass).sum()
    frac = np.minimum(1, np.arange(steps) * delta / gap)
    path = (1 - frac)[:, None] * start.mass + frac[:, None] * end.mass
    for t in (1, 50, 300):
        direct = sum(
            sample_weights(0.9, t)[s] * np.abs(path[s] - path[t - 1]).sum() for s in range(t)
        )
        assert tracking_bias(path, 0.9, t) == pytest.approx(direct)
        assert tracking_bias(path, 0.9, t) <= bias_bound(delta, 0.9) + 1e-12


def test_stationary_error_shrinks_and_stays_below_root_n_over_samples():
    p = synth_distribution("multimodal", 30, seed=2)
    rng = np.random.default_rng(3)
    means = []
    for n in (100, 1000):
        errs = []
        for _ in range(200):
            s = EstimatorState(30, 1.0).observe_many(p.sample(n, rng))
            errs.append(np.abs(s.snapshot().mass - p.mass).sum())
        means.append(np.mean(errs))
        assert means[-1] < math.sqrt(30 / n)
    assert means[1] < means[0]
