import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sparsecache.errors import DepthOutOfRange
from sparsecache.estimators import CheckpointPlanner, DecayedHistogram, check_depths


def test_check_depths():
    np.testing.assert_array_equal(check_depths([1, 2.0, 3]), [1, 2, 3])
    with pytest.raises(ValueError):
        check_depths([1.5])
    with pytest.raises(DepthOutOfRange):
        check_depths([0, 1])
    with pytest.raises(DepthOutOfRange):
        check_depths([4], n_positions=3)
    with pytest.raises(ValueError):
        check_depths([1, np.nan])


def test_decayed_histogram():
    est = DecayedHistogram(n_positions=5, gamma=0.5).fit([2, 2, 5])
    np.testing.assert_allclose(est.histogram_.mass, [0, 3 / 7, 0, 0, 4 / 7])
    np.testing.assert_allclose(est.predict_proba([2, 5, 4]), [3 / 7, 4 / 7, 0])
    est.partial_fit([1])
    assert est.state_.sample_count == 4
    with pytest.raises(NotFittedError):
        DecayedHistogram().histogram_


def test_planner_fit_predict_transform_score():
    depths = [5, 5, 5, 4]
    planner = CheckpointPlanner(budget=1).fit(depths)
    assert planner.checkpoints_.positions == (4,)
    np.testing.assert_array_equal(planner.predict([5, 4, 3]), [4, 4, 0])
    np.testing.assert_array_equal(planner.transform([5, 4, 3]), [1, 0, 3])
    assert planner.score(depths) == pytest.approx(1 - 3 / 19)
    np.testing.assert_array_equal(planner.fit_transform(depths), [1, 1, 1, 0])


def test_planner_block_clipping_and_grid():
    rng = np.random.default_rng(0)
    depths = rng.integers(1, 300, size=500)
    clipped = CheckpointPlanner(budget=3, block=32).fit(depths)
    grid = CheckpointPlanner(budget=3, block=32, grid=True).fit(depths)
    for p in (clipped, grid):
        assert all(x % 32 == 0 for x in p.checkpoints_.positions)
    assert grid.cost_.expected_recompute <= clipped.cost_.expected_recompute + 1e-9
    with pytest.raises(ValueError):
        CheckpointPlanner(grid=True).fit(depths)


def test_sklearn_protocol():
    p = CheckpointPlanner(strategy="balanced", budget=2, n_positions=10)
    assert p.get_params()["budget"] == 2
    q = clone(p).set_params(budget=3)
    assert q.fit([1, 10]).checkpoints_.positions == (2, 5, 8)
    with pytest.raises(NotFittedError):
        CheckpointPlanner().predict([1])
