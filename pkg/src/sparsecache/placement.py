"""Checkpoint sets, their recompute cost, and placement strategies.

A checkpoint at depth ``c`` stores the exact recurrent state after token ``c``.
A request that shares ``t`` tokens with the cached prefix resumes from the
deepest checkpoint ``<= t`` and replays the rest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numba
import numpy as np

from .distribution import OverlapHistogram, no_cache_baseline
from .errors import BudgetTooLarge, DepthOutOfRange, InputError, LengthMismatch

STRATEGIES = ("none", "balanced", "block", "sqrt", "logarithmic", "dp")

DEFAULT_PLAN_BLOCK = 128
DEFAULT_SIM_BLOCK = 64


@dataclass(frozen=True)
class CheckpointSet:
    n_positions: int
    positions: tuple = ()

    def __post_init__(self):
        pos = tuple(int(c) for c in self.positions)
        object.__setattr__(self, "positions", pos)
        if self.n_positions < 1:
            raise InputError("n_positions must be >= 1")
        if pos and (pos[0] < 1 or pos[-1] > self.n_positions):
            raise InputError(f"positions must lie in [1, {self.n_positions}]")
        if any(a >= b for a, b in zip(pos, pos[1:])):
            raise InputError("positions must be strictly increasing")

    def __len__(self):
        return len(self.positions)

    def __iter__(self):
        return iter(self.positions)

    @property
    def gaps(self) -> np.ndarray:
        """Gap lengths between consecutive checkpoints, with 0 and N+1 as sentinels."""
        full = np.array((0,) + self.positions + (self.n_positions + 1,))
        return np.diff(full)

    def to_dict(self) -> dict:
        return {"n": self.n_positions, "positions": list(self.positions)}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "CheckpointSet":
        try:
            return cls(int(obj["n"]), tuple(obj["positions"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed checkpoint set: {exc}") from None


@dataclass(frozen=True)
class PlacementCost:
    expected_recompute: float
    worst_case_recompute: int
    no_cache: float
    savings: float
    reduction_factor: float

    def to_dict(self) -> dict:
        d = {
            "expected_recompute": self.expected_recompute,
            "worst_case_recompute": self.worst_case_recompute,
            "no_cache": self.no_cache,
            "savings": self.savings,
            # JSON has no infinity; null marks an unbounded reduction
            "reduction_factor": None if math.isinf(self.reduction_factor) else self.reduction_factor,
        }
        return d


def reduction_from(no_cache: float, recompute: float) -> float:
    if recompute <= 0:
        return math.inf if no_cache > 0 else 1.0
    return no_cache / recompute


def _reusable_depths(c: CheckpointSet, t: np.ndarray) -> np.ndarray:
    pos = np.asarray(c.positions, dtype=np.int64)
    if pos.size == 0:
        return np.zeros_like(t)
    idx = np.searchsorted(pos, t, side="right")
    return np.where(idx > 0, pos[np.maximum(idx - 1, 0)], 0)


def reusable_depth(c: CheckpointSet, t: int) -> int:
    """Deepest checkpoint at or below depth ``t`` (0 if none)."""
    if not 1 <= t <= c.n_positions:
        raise DepthOutOfRange(f"depth {t} outside [1, {c.n_positions}]")
    return int(_reusable_depths(c, np.array([t]))[0])


def expected_cost(h: OverlapHistogram, c: CheckpointSet) -> PlacementCost:
    if h.n_positions != c.n_positions:
        raise LengthMismatch(f"histogram has N={h.n_positions}, checkpoints N={c.n_positions}")
    t = np.arange(1, h.n_positions + 1)
    r = t - _reusable_depths(c, t)
    nc = no_cache_baseline(h)
    e = min(float(np.dot(h.mass, r)), nc)
    return PlacementCost(
        expected_recompute=e,
        worst_case_recompute=int(r.max()),
        no_cache=nc,
        savings=min(max(1.0 - e / nc, 0.0), 1.0),
        reduction_factor=reduction_from(nc, e),
    )


def _check_budget(n_positions, budget):
    if budget < 0:
        raise InputError(f"budget must be >= 0, got {budget}")
    if budget > n_positions:
        raise BudgetTooLarge(f"budget {budget} exceeds prefix length {n_positions}")


def balanced_placement(n_positions: int, budget: int) -> CheckpointSet:
    """Evenly spaced checkpoints ``floor(i (N+1) / (M+1))``; gaps differ by at most one."""
    _check_budget(n_positions, budget)
    n, k = n_positions + 1, budget + 1
    pos = [i * n // k for i in range(1, budget + 1)]
    return CheckpointSet(n_positions, tuple(c for c in pos if c > 0))


def uniform_optimal_cost(n_positions: int, budget: int) -> float:
    """Optimal expected recompute under a uniform overlap law, in closed form."""
    _check_budget(n_positions, budget)
    k = budget + 1
    q, rho = divmod(n_positions + 1, k)
    total = (k - rho) * q * (q - 1) // 2 + rho * q * (q + 1) // 2
    return total / n_positions


def worst_case_optimal(n_positions: int, budget: int) -> int:
    """Minimax recompute achievable with ``budget`` checkpoints."""
    _check_budget(n_positions, budget)
    return -(-(n_positions + 1) // (budget + 1)) - 1


def block_placement(n_positions: int, block: int) -> CheckpointSet:
    if block < 1:
        raise InputError("block must be >= 1")
    return CheckpointSet(n_positions, tuple(range(block, n_positions + 1, block)))


def sqrt_placement(n_positions: int) -> CheckpointSet:
    if n_positions < 1:
        raise InputError("n_positions must be >= 1")
    return block_placement(n_positions, math.isqrt(n_positions))


def logarithmic_placement(n_positions: int, budget: int) -> CheckpointSet:
    """Checkpoints at ``round(N (2^i - 1) / (2^M - 1))``.

    Gaps double from the start of the prefix, so checkpoints are dense early.
    Collisions after rounding are merged, so fewer than ``budget`` positions
    may come back for small ``N``.
    """
    _check_budget(n_positions, budget)
    if budget == 0:
        return CheckpointSet(n_positions)
    den = (1 << budget) - 1
    pos = set()
    for i in range(1, budget + 1):
        num = n_positions * ((1 << i) - 1)
        c = (2 * num + den) // (2 * den)  # round half up, exact in integers
        pos.add(min(max(c, 1), n_positions))
    return CheckpointSet(n_positions, tuple(sorted(pos)))


def clip_to_blocks(c: CheckpointSet, block: int) -> CheckpointSet:
    """Floor every checkpoint to a multiple of ``block``; zeros dropped, duplicates merged."""
    if block < 1:
        raise InputError("block must be >= 1")
    clipped = sorted({(x // block) * block for x in c.positions} - {0})
    return CheckpointSet(c.n_positions, tuple(clipped))


# ---------------------------------------------------------------------------
# Dynamic program
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _cht_layers(P, T, budget, allowed):
    """Fill dp[m, j] = min cost of depths 1..j using at most m checkpoints.

    P, T are 1-based prefix sums with P[0] = T[0] = 0. The candidate ``s`` is
    the line ``y = -s * x + (dp[m-1, s-1] - T[s-1] + s * P[s-1])`` queried at
    ``x = P[j]``. Slopes fall with ``s`` and queries rise with ``j``, so a
    monotone pointer over the lower envelope serves each layer in O(N).
    ``arg[m, j]`` is the chosen deepest checkpoint, or 0 when dp[m-1, j] was
    kept (an extra checkpoint did not strictly help).
    """
    n = P.shape[0] - 1
    dp = np.empty((budget + 1, n + 1))
    arg = np.zeros((budget + 1, n + 1), dtype=np.int64)
    for j in range(n + 1):
        dp[0, j] = T[j]
    hull_s = np.empty(n + 1, dtype=np.int64)
    hull_b = np.empty(n + 1)
    for m in range(1, budget + 1):
        dp[m, 0] = 0.0
        head = 0
        tail = 0
        for j in range(1, n + 1):
            if allowed[j]:
                s3 = j
                b3 = dp[m - 1, j - 1] - T[j - 1] + j * P[j - 1]
                while tail - head >= 2:
                    s1 = hull_s[tail - 2]
                    b1 = hull_b[tail - 2]
                    s2 = hull_s[tail - 1]
                    b2 = hull_b[tail - 1]
                    # middle line never strictly below both neighbours
                    if (b3 - b1) * (s2 - s1) <= (b2 - b1) * (s3 - s1):
                        tail -= 1
                    else:
                        break
                hull_s[tail] = s3
                hull_b[tail] = b3
                tail += 1
            keep = dp[m - 1, j]
            dp[m, j] = keep
            if tail > head:
                x = P[j]
                while tail - head >= 2 and (
                    hull_b[head + 1] - hull_s[head + 1] * x < hull_b[head] - hull_s[head] * x
                ):
                    head += 1
                best = hull_b[head] - hull_s[head] * x + T[j]
                if best < keep:
                    dp[m, j] = best
                    arg[m, j] = hull_s[head]
    return dp, arg


def _backtrack(arg, budget, n):
    pos = []
    m, j = budget, n
    while m > 0 and j > 0:
        s = int(arg[m, j])
        if s == 0:
            m -= 1
            continue
        pos.append(s)
        j = s - 1
        m -= 1
    return sorted(pos)


def _prune_idle(h: OverlapHistogram, positions: Sequence[int]) -> tuple:
    """Drop checkpoints whose segment up to the next checkpoint carries no mass.

    Such a checkpoint has exactly zero marginal gain, and removing several at
    once is safe: a neighbour absorbing an empty segment gains nothing either.
    """
    keep = []
    bounds = list(positions) + [h.n_positions + 1]
    for c, nxt in zip(positions, bounds[1:]):
        if np.any(h.mass[c - 1:nxt - 1] > 0):
            keep.append(c)
    return tuple(keep)


def dp_optimal(
    h: OverlapHistogram,
    budget: int,
    candidate_grid: Optional[int] = None,
) -> CheckpointSet:
    """Checkpoint set of size ``<= budget`` minimizing expected recompute under ``h``.

    With ``candidate_grid=B`` only multiples of ``B`` are eligible, which is
    the exact optimum under block alignment. Checkpoints that carry zero
    marginal gain are dropped, so fewer than ``budget`` may be returned.
    Runs in O(N * budget).
    """
    n = h.n_positions
    _check_budget(n, budget)
    if budget == 0:
        return CheckpointSet(n)
    allowed = np.ones(n + 1, dtype=np.bool_)
    allowed[0] = False
    if candidate_grid is not None:
        if candidate_grid < 1:
            raise InputError("candidate_grid must be >= 1")
        allowed[:] = False
        allowed[candidate_grid::candidate_grid] = True
    P = np.concatenate([[0.0], h.prefix_mass])
    T = np.concatenate([[0.0], h.prefix_moment])
    _, arg = _cht_layers(P, T, budget, allowed)
    return CheckpointSet(n, _prune_idle(h, _backtrack(arg, budget, n)))


def dp_optimal_naive(h: OverlapHistogram, budget: int) -> CheckpointSet:
    """Reference O(N^2 M) evaluation of the same recurrence.

    Segment costs ``w(s, j) = sum_{t=s..j} p_t (t - s)`` are accumulated
    directly rather than through the prefix-sum identity the fast solver uses.
    Intended as a test oracle.
    """
    n = h.n_positions
    _check_budget(n, budget)
    p = h.mass
    t = np.arange(1, n + 1, dtype=np.float64)
    # w[s, j] for 1 <= s <= j <= n, stored at [s - 1, j]
    w = np.zeros((n, n + 1))
    for s in range(1, n + 1):
        w[s - 1, s:] = np.cumsum(p[s - 1:] * (t[s - 1:] - s))
    dp = np.zeros((budget + 1, n + 1))
    choice = np.zeros((budget + 1, n + 1), dtype=np.int64)
    dp[0, 1:] = np.cumsum(p * t)
    for m in range(1, budget + 1):
        for j in range(1, n + 1):
            cand = dp[m - 1, :j] + w[:j, j]
            s = int(np.argmin(cand))
            if cand[s] < dp[m - 1, j]:
                dp[m, j] = cand[s]
                choice[m, j] = s + 1
            else:
                dp[m, j] = dp[m - 1, j]
    return CheckpointSet(n, _prune_idle(h, _backtrack(choice, budget, n)))


def place(
    strategy: str,
    n_positions: int,
    budget: int = 0,
    histogram: Optional[OverlapHistogram] = None,
    block: int = DEFAULT_PLAN_BLOCK,
    grid: bool = False,
) -> CheckpointSet:
    """Dispatch to a named strategy (unclipped).

    ``block`` is the spacing for the ``block`` strategy and, with ``grid``, the
    candidate grid for ``dp``. ``dp`` needs a histogram over ``n_positions``.
    """
    if strategy == "none":
        return CheckpointSet(n_positions)
    if strategy == "balanced":
        return balanced_placement(n_positions, budget)
    if strategy == "block":
        return block_placement(n_positions, block)
    if strategy == "sqrt":
        return sqrt_placement(n_positions)
    if strategy == "logarithmic":
        return logarithmic_placement(n_positions, budget)
    if strategy == "dp":
        if histogram is None:
            raise InputError("dp strategy needs a histogram")
        if histogram.n_positions != n_positions:
            raise LengthMismatch("histogram length differs from n_positions")
        return dp_optimal(histogram, budget, block if grid else None)
    raise InputError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def load_checkpoints(path) -> CheckpointSet:
    try:
        with open(path) as f:
            obj = json.load(f)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    return CheckpointSet.from_dict(obj)

