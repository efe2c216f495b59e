"""scikit-learn style wrappers.

Both estimators take a 1-D array of observed overlap depths as ``X``, so they
drop into pipelines, ``clone`` and ``get_params``/``set_params`` like any
other sklearn component.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .distribution import OverlapHistogram
from .errors import DepthOutOfRange
from .estimator import EstimatorState
from .placement import DEFAULT_PLAN_BLOCK, clip_to_blocks, expected_cost, place


def check_depths(X, n_positions=None) -> np.ndarray:
    """Validate depths as a 1-D integer array in ``[1, n_positions]``."""
    arr = check_array(X, ensure_2d=False, dtype=None, ensure_all_finite=True)
    arr = np.asarray(arr).reshape(-1)
    if arr.size and not np.all(arr == np.round(arr)):
        raise ValueError("depths must be integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 1:
        raise DepthOutOfRange("depths must be >= 1")
    if n_positions is not None and arr.size and arr.max() > n_positions:
        raise DepthOutOfRange(f"depths must be <= {n_positions}")
    return arr


class DecayedHistogram(BaseEstimator):
    """Exponentially weighted overlap histogram (``gamma=1`` for plain counts).

    Parameters
    ----------
    n_positions : int or None
        Largest tracked depth. ``None`` takes the largest depth seen by the
        first ``fit``/``partial_fit``; later, deeper samples are clamped.
    gamma : float
        Per-sample decay in (0, 1].
    """

    def __init__(self, n_positions=None, gamma=0.99):
        self.n_positions = n_positions
        self.gamma = gamma

    def fit(self, X, y=None):
        depths = check_depths(X)
        n = self.n_positions or int(depths.max())
        self.state_ = EstimatorState(n, self.gamma)
        self.state_.observe_many(depths)
        return self

    def partial_fit(self, X, y=None):
        if not hasattr(self, "state_"):
            return self.fit(X)
        self.state_.observe_many(check_depths(X))
        return self

    @property
    def histogram_(self) -> OverlapHistogram:
        check_is_fitted(self, "state_")
        return self.state_.snapshot()

    def predict_proba(self, X):
        """Estimated probability of each depth in ``X`` (0 beyond the tracked range)."""
        depths = check_depths(X)
        mass = self.histogram_.mass
        out = np.zeros(depths.shape)
        inside = depths <= mass.size
        out[inside] = mass[depths[inside] - 1]
        return out


class CheckpointPlanner(BaseEstimator):
    """Learn a checkpoint placement from observed overlap depths.

    ``fit`` estimates the depth histogram and places checkpoints with the
    chosen strategy; ``predict`` maps depths to the deepest reusable
    checkpoint, ``transform`` to the tokens that must be replayed, and
    ``score`` is the token savings on ``X``.

    Parameters
    ----------
    strategy : {"dp", "balanced", "logarithmic", "block", "sqrt", "none"}
    budget : int
        Checkpoint budget (capped at the prefix length).
    block : int or None
        Block size. When set, positions are floored to multiples of it;
        ``block`` and grid-mode ``dp`` also use it as their spacing.
    grid : bool
        Restrict ``dp`` to multiples of ``block`` instead of flooring afterwards.
    n_positions : int or None
        Prefix length; defaults to the largest depth seen in ``fit``.
    gamma : float
        Decay of the fitted histogram; 1.0 weights all samples equally.
    """

    def __init__(self, strategy="dp", budget=8, block=None, grid=False, n_positions=None, gamma=1.0):
        self.strategy = strategy
        self.budget = budget
        self.block = block
        self.grid = grid
        self.n_positions = n_positions
        self.gamma = gamma

    def fit(self, X, y=None):
        hist = DecayedHistogram(self.n_positions, self.gamma).fit(X)
        return self.fit_histogram(hist.histogram_)

    def fit_histogram(self, histogram: OverlapHistogram):
        n = histogram.n_positions
        if self.grid and not self.block:
            raise ValueError("grid mode needs a block size")
        budget = min(self.budget, n)
        cps = place(self.strategy, n, budget, histogram=histogram,
                    block=self.block or DEFAULT_PLAN_BLOCK, grid=self.grid)
        if self.block:
            cps = clip_to_blocks(cps, self.block)
        self.histogram_ = histogram
        self.checkpoints_ = cps
        self.cost_ = expected_cost(histogram, cps)
        self.n_positions_ = n
        return self

    def predict(self, X):
        check_is_fitted(self, "checkpoints_")
        depths = check_depths(X, self.n_positions_)
        pos = np.asarray(self.checkpoints_.positions, dtype=np.int64)
        if pos.size == 0:
            return np.zeros_like(depths)
        idx = np.searchsorted(pos, depths, side="right")
        return np.where(idx > 0, pos[np.maximum(idx - 1, 0)], 0)

    def transform(self, X):
        depths = check_depths(X, getattr(self, "n_positions_", None))
        return depths - self.predict(depths)

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)

    def score(self, X, y=None):
        depths = check_depths(X, getattr(self, "n_positions_", None))
        total = depths.sum()
        return 0.0 if total == 0 else 1.0 - float(self.transform(depths).sum()) / float(total)
