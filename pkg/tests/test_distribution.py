import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsecache.distribution import (
    OverlapHistogram,
    histogram_from_counts,
    load_histogram,
    no_cache_baseline,
    plugin_bound,
    save_histogram,
    synth_distribution,
    tv_distance,
)
from sparsecache.errors import AllZero, BadDelta, BadLength, BadParams, LengthMismatch
from sparsecache.placement import CheckpointSet, expected_cost

mass_vectors = st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=40).filter(
    lambda v: sum(v) > 1e-6
)


def test_counts_uniform():
    h = histogram_from_counts([1, 1, 1, 1])
    np.testing.assert_allclose(h.mass, [0.25] * 4)
    np.testing.assert_allclose(h.prefix_mass, [0.25, 0.5, 0.75, 1.0])


def test_counts_point_mass():
    h = histogram_from_counts([0, 0, 0, 0, 7])
    np.testing.assert_array_equal(h.mass, [0, 0, 0, 0, 1])
    assert h.prefix_moment[-1] == 5


def test_counts_prefix_moment_by_hand():
    h = histogram_from_counts([3, 1])
    np.testing.assert_allclose(h.mass, [0.75, 0.25])
    direct = [sum(t * h.mass[t - 1] for t in range(1, j + 1)) for j in (1, 2)]
    np.testing.assert_allclose(h.prefix_moment, direct)
    np.testing.assert_allclose(h.prefix_moment, [0.75, 1.25])


def test_counts_errors():
    with pytest.raises(AllZero):
        histogram_from_counts([0, 0, 0])
    with pytest.raises(BadLength):
        histogram_from_counts([])


def test_arrays_read_only():
    h = histogram_from_counts([1, 2])
    with pytest.raises(ValueError):
        h.mass[0] = 1.0


@pytest.mark.parametrize(
    "mass,expected", [([1] * 5, 3.0), ([0, 0, 0, 0, 1], 5.0), ([0.75, 0.25], 1.25)]
)
def test_no_cache_baseline(mass, expected):
    assert no_cache_baseline(histogram_from_counts(mass)) == pytest.approx(expected, abs=1e-12)


def test_tv_examples():
    u = histogram_from_counts([1, 1, 1, 1])
    assert tv_distance(u, u) == 0
    assert tv_distance(histogram_from_counts([1, 0]), histogram_from_counts([0, 1])) == 2.0
    q = histogram_from_counts([0.4, 0.3, 0.2, 0.1])
    direct = sum(abs(a - b) for a, b in zip([0.25] * 4, [0.4, 0.3, 0.2, 0.1]))
    assert direct == pytest.approx(0.4)
    assert tv_distance(u, q) == pytest.approx(direct, abs=1e-12)
    with pytest.raises(LengthMismatch):
        tv_distance(u, histogram_from_counts([1, 1]))


def test_plugin_bound_examples():
    assert plugin_bound(10_000, 100, 0.05) == pytest.approx(0.1 + math.sqrt(2 * math.log(20) / 1e4))
    assert plugin_bound(10_000, 100, 0.05) == pytest.approx(0.1245, abs=5e-5)
    assert plugin_bound(1, 1, 1 - 1e-15) == pytest.approx(1.0, abs=1e-6)
    assert plugin_bound(2000, 30, 0.1) == pytest.approx(plugin_bound(1000, 30, 0.1) / math.sqrt(2))
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(BadDelta):
            plugin_bound(10, 10, bad)


@given(st.integers(1, 10**6), st.integers(1, 10**4), st.floats(1e-6, 0.999))
def test_plugin_bound_monotone(n, big_n, delta):
    b = plugin_bound(n, big_n, delta)
    assert plugin_bound(n + 1, big_n, delta) < b
    assert plugin_bound(n, big_n + 1, delta) > b
    assert plugin_bound(n, big_n, delta / 2) > b


def test_synth_uniform():
    np.testing.assert_allclose(synth_distribution("uniform", 10).mass, [0.1] * 10)


def test_synth_end_spike():
    h = synth_distribution("end_spike", 100, {"spike_mass": 0.9, "spike_width": 5})
    assert h.mass[95:].sum() >= 0.9 - 1e-12


def test_synth_head_heavy():
    h = synth_distribution("head_heavy", 200, {"head_mass": 0.7, "head_width": 20})
    assert h.mass[:20].sum() >= 0.7 - 1e-12


def test_synth_multimodal_deterministic():
    a = synth_distribution("multimodal", 1000, {"n_modes": 3}, seed=4)
    b = synth_distribution("multimodal", 1000, {"n_modes": 3}, seed=4)
    np.testing.assert_array_equal(a.mass, b.mass)
    c = synth_distribution("multimodal", 1000, {"n_modes": 3}, seed=5)
    assert tv_distance(a, c) > 0


@pytest.mark.parametrize("shape", ["uniform", "end_spike", "multimodal", "head_heavy"])
def test_synth_normalized(shape):
    h = synth_distribution(shape, 257, seed=3)
    assert abs(h.mass.sum() - 1) < 1e-12 and np.all(h.mass >= 0)


@pytest.mark.parametrize(
    "shape,params",
    [
        ("end_spike", {"spike_mass": 0.0}),
        ("end_spike", {"spike_mass": 1.5}),
        ("end_spike", {"spike_width": 101}),
        ("head_heavy", {"head_width": 500}),
        ("head_heavy", {"head_mass": -0.1}),
    ],
)
def test_synth_bad_params(shape, params):
    with pytest.raises(BadParams):
        synth_distribution(shape, 100, params)


def test_synth_rejects_unknown_shape_and_tiny_n():
    with pytest.raises(BadParams):
        synth_distribution("zipf", 100)
    with pytest.raises((BadLength, BadParams)):
        synth_distribution("uniform", 1)


@given(mass_vectors)
def test_histogram_invariants(mass):
    h = histogram_from_counts(mass)
    assert abs(h.prefix_mass[-1] - 1) < 1e-12
    assert np.all(np.diff(h.prefix_mass) >= 0) and np.all(np.diff(h.prefix_moment) >= 0)
    assert tv_distance(h, h) == 0


@given(mass_vectors)
def test_baseline_equals_empty_placement_cost(mass):
    h = histogram_from_counts(mass)
    cost = expected_cost(h, CheckpointSet(h.n_positions))
    assert cost.expected_recompute == pytest.approx(no_cache_baseline(h), rel=1e-12, abs=1e-12)
    assert cost.savings == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=200)
@given(st.integers(1, 30), st.data())
def test_tv_metric_properties(n, data):
    vec = st.lists(st.floats(0, 1, allow_nan=False), min_size=n, max_size=n).filter(lambda v: sum(v) > 1e-6)
    p, q, r = (histogram_from_counts(data.draw(vec)) for _ in range(3))
    assert tv_distance(p, q) == pytest.approx(tv_distance(q, p), abs=1e-15)
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12
    assert tv_distance(p, q) <= 2 + 1e-12


def test_truncate_and_pad():
    h = histogram_from_counts([1, 1, 2])
    np.testing.assert_allclose(h.truncate(2).mass, [0.5, 0.5])
    np.testing.assert_allclose(h.truncate(4).mass, [0.25, 0.25, 0.5, 0])
    with pytest.raises(AllZero):
        histogram_from_counts([0, 0, 1]).truncate(2)


def test_sample_matches_law():
    h = histogram_from_counts([1, 0, 3])
    d = h.sample(40_000, np.random.default_rng(0))
    assert set(np.unique(d)) == {1, 3}
    assert abs((d == 3).mean() - 0.75) < 0.01


def test_file_round_trip(tmp_path):
    h = synth_distribution("multimodal", 50, seed=1)
    path = tmp_path / "h.json"
    save_histogram(h, path)
    assert json.loads(path.read_text())["n"] == 50
    np.testing.assert_allclose(load_histogram(path).mass, h.mass, rtol=1e-14, atol=0)
    assert OverlapHistogram.from_dict(h.to_dict()).n_positions == 50


def test_file_length_mismatch(tmp_path):
    path = tmp_path / "h.json"
    path.write_text('{"n": 3, "mass": [1, 2]}')
    with pytest.raises(LengthMismatch):
        load_histogram(path)
