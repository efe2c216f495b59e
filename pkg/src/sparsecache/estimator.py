"""Online overlap-depth histograms with geometric forgetting."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from .distribution import OverlapHistogram
from .errors import BadDecay, DepthOutOfRange, InputError, NoSamples

DEFAULT_DECAY = 0.99
DEFAULT_REFRESH = 10

# raw weights are stored divided by a running scale; fold the scale back in
# before 1/scale can overflow
_RESCALE_BELOW = 1e-150


class EstimatorState:
    """Decayed per-depth weights.

    After ``t`` observations the weight of the ``s``-th sample is
    ``decay ** (t - s)``. ``decay == 1`` gives the plain empirical histogram.
    Each observation costs O(1): instead of multiplying every weight by
    ``decay``, a global scale shrinks and new samples are added at ``1/scale``.

    Depths above ``n_positions`` are clamped to ``n_positions`` and counted in
    ``clamped``. Not thread-safe; snapshots are immutable.
    """

    def __init__(self, n_positions: int, decay: float = DEFAULT_DECAY):
        if n_positions < 1:
            raise InputError("n_positions must be >= 1")
        if not 0 < decay <= 1:
            raise BadDecay(f"decay must lie in (0, 1], got {decay}")
        self.n_positions = int(n_positions)
        self.decay = float(decay)
        self.sample_count = 0
        self.weight_total = 0.0
        self.clamped = 0
        self._raw = np.zeros(self.n_positions)
        self._scale = 1.0

    @property
    def weights(self) -> np.ndarray:
        return self._raw * self._scale

    def observe(self, depth: int, clamp: bool = True) -> "EstimatorState":
        d = int(depth)
        if d < 1:
            raise DepthOutOfRange(f"depth {d} < 1")
        if d > self.n_positions:
            if not clamp:
                raise DepthOutOfRange(f"depth {d} > {self.n_positions}")
            d = self.n_positions
            self.clamped += 1
        if self.decay < 1.0:
            self._scale *= self.decay
            if self._scale < _RESCALE_BELOW:
                self._raw *= self._scale
                self._scale = 1.0
        self._raw[d - 1] += 1.0 / self._scale
        self.weight_total = self.decay * self.weight_total + 1.0
        self.sample_count += 1
        return self

    def observe_many(self, depths: Sequence[int]) -> "EstimatorState":
        for d in depths:
            self.observe(d)
        return self

    def snapshot(self) -> OverlapHistogram:
        if self.sample_count == 0:
            raise NoSamples("no observations yet")
        return OverlapHistogram.from_mass(self._raw)

    def copy(self) -> "EstimatorState":
        other = EstimatorState(self.n_positions, self.decay)
        other.sample_count = self.sample_count
        other.weight_total = self.weight_total
        other.clamped = self.clamped
        other._raw = self._raw.copy()
        other._scale = self._scale
        return other

    def to_dict(self) -> dict:
        return {
            "n": self.n_positions,
            "gamma": self.decay,
            "weights": [float(w) for w in self.weights],
            "count": self.sample_count,
            "clamped": self.clamped,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "EstimatorState":
        try:
            state = cls(int(obj["n"]), float(obj["gamma"]))
            weights = np.asarray(obj["weights"], dtype=np.float64)
            count = int(obj["count"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed estimator state: {exc}") from None
        if weights.shape != (state.n_positions,) or np.any(weights < 0):
            raise InputError("weights must be n non-negative numbers")
        state._raw = weights.copy()
        state.sample_count = count
        if state.decay < 1.0:
            state.weight_total = (1.0 - state.decay ** count) / (1.0 - state.decay)
        else:
            state.weight_total = float(count)
        state.clamped = int(obj.get("clamped", 0))
        return state

    def __repr__(self):
        return (
            f"EstimatorState(n_positions={self.n_positions}, decay={self.decay}, "
            f"sample_count={self.sample_count})"
        )


def observe(state: EstimatorState, depth: int) -> EstimatorState:
    return state.observe(depth)


def snapshot(state: EstimatorState) -> OverlapHistogram:
    return state.snapshot()


def _check_decay(decay):
    if not 0 < decay < 1:
        raise BadDecay(f"decay must lie in (0, 1), got {decay}")


def sample_weights(decay: float, sample_count: int) -> np.ndarray:
    """Normalized weight of each sample ``s = 1..t`` in the decayed histogram."""
    _check_decay(decay)
    t = int(sample_count)
    ages = np.arange(t - 1, -1, -1, dtype=np.float64)
    return (1.0 - decay) * decay ** ages / (1.0 - decay ** t)


def variance_term(decay: float, sample_count: int, n_positions: int) -> float:
    """Bound on the expected L1 sampling error of the decayed histogram."""
    _check_decay(decay)
    if sample_count < 1:
        raise InputError("sample_count must be >= 1")
    g_t = decay ** sample_count
    return math.sqrt(n_positions * (1 - decay) / (1 + decay) * (1 + g_t) / (1 - g_t))


def bias_bound(drift_per_step: float, decay: float) -> float:
    """Stale-sample bias bound under per-step L1 drift of at most ``drift_per_step``."""
    _check_decay(decay)
    if drift_per_step < 0:
        raise InputError("drift_per_step must be >= 0")
    return drift_per_step * decay / (1 - decay)


def tracking_bias(path: np.ndarray, decay: float, sample_count: int) -> float:
    """Exact weighted bias ``sum_s w_s * ||p_s - p_t||_1`` for a known law path.

    ``path`` holds one probability vector per row, row ``s - 1`` for sample ``s``.
    """
    t = int(sample_count)
    path = np.asarray(path, dtype=np.float64)
    if path.ndim != 2 or path.shape[0] < t:
        raise InputError("path must have at least sample_count rows")
    dist = np.abs(path[:t] - path[t - 1]).sum(axis=1)
    return float(np.dot(sample_weights(decay, t), dist))
