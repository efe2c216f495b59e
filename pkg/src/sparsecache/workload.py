"""Synthetic grouped request streams and drifting depth traces."""

from __future__ import annotations

import dataclasses
import json
from typing import Optional, Sequence, Union

import numpy as np

from .distribution import OverlapHistogram, synth_distribution
from .errors import BadDrift, BadRange, InputError
from .simulator import DepthRequest, Request

DEFAULT_VOCAB = 32000


def _length_sampler(spec, rng):
    if isinstance(spec, (int, np.integer)):
        lo = hi = int(spec)
    else:
        lo, hi = (int(x) for x in spec)
    if lo < 1 or hi < lo:
        raise BadRange(f"bad base length range {spec!r}")
    return lambda: int(rng.integers(lo, hi + 1))


def gen_grouped_trace(
    n_groups: int,
    requests_per_group: int,
    base_length: Union[int, Sequence[int]],
    suffix_len_range: Sequence[int],
    overlap_shape: str,
    seed: int = 0,
    shape_params: Optional[dict] = None,
    rate_per_group: float = 1.0,
    vocab_size: int = DEFAULT_VOCAB,
    with_depths: bool = False,
):
    """Grouped requests interleaved by Poisson arrivals.

    Every group owns a random base sequence (length fixed or drawn from
    ``base_length=(lo, hi)``). A request copies ``base[:d]`` with ``d`` drawn
    from ``overlap_shape`` over ``1..len(base)``, then appends a fresh suffix.

    Token layout keeps overlaps exact: a group's first token is its group
    index, other base tokens come from ``[n_groups, vocab_size)``, and suffix
    tokens are unique ids ``>= vocab_size``, so ``LCP(request, base) == d``.
    With ``with_depths`` the sampled ``d`` per request id is returned too.
    """
    if n_groups < 1 or requests_per_group < 1:
        raise BadRange("n_groups and requests_per_group must be >= 1")
    lo, hi = (int(x) for x in suffix_len_range)
    if lo < 0 or hi < lo:
        raise BadRange(f"bad suffix length range {suffix_len_range!r}")
    if vocab_size <= n_groups:
        raise BadRange("vocab_size must exceed n_groups")
    rng = np.random.default_rng(seed)
    base_len = _length_sampler(base_length, rng)
    fresh = vocab_size
    groups, depths = [], {}
    for g in range(n_groups):
        n = base_len()
        base = rng.integers(n_groups, vocab_size, size=n)
        base[0] = g
        if n >= 2:
            shape = synth_distribution(overlap_shape, n, shape_params, seed=int(rng.integers(2**31)))
            d = shape.sample(requests_per_group, rng)
        else:
            d = np.ones(requests_per_group, dtype=np.int64)
        suffix = rng.integers(lo, hi + 1, size=requests_per_group)
        reqs = []
        for k in range(requests_per_group):
            rid = g * requests_per_group + k
            tail = tuple(range(fresh, fresh + int(suffix[k])))
            fresh += int(suffix[k])
            tokens = tuple(int(x) for x in base[: d[k]]) + tail
            reqs.append(Request(rid, f"g{g}", tokens, 0.0))
            depths[rid] = int(d[k])
        groups.append(reqs)
    trace = poisson_interleave(groups, rate_per_group, seed=int(rng.integers(2**31)))
    return (trace, depths) if with_depths else trace


def poisson_interleave(groups, rate_per_group=1.0, seed: int = 0) -> list:
    """Stamp each group with cumulative exponential gaps and merge by arrival time.

    ``rate_per_group`` is one rate for all groups or one per group. Ties are
    broken by (group position, request id).
    """
    rates = np.broadcast_to(np.asarray(rate_per_group, dtype=np.float64), (len(groups),))
    if np.any(rates <= 0):
        raise InputError("rates must be > 0")
    rng = np.random.default_rng(seed)
    stamped = []
    for gi, (reqs, lam) in enumerate(zip(groups, rates)):
        times = np.cumsum(rng.exponential(1.0 / lam, size=len(reqs)))
        for r, at in zip(reqs, times):
            stamped.append((float(at), gi, r.id, dataclasses.replace(r, arrival_time=float(at))))
    stamped.sort(key=lambda x: x[:3])
    return [x[3] for x in stamped]


def drift_path(start: OverlapHistogram, end: OverlapHistogram, n_steps: int, drift_per_step: float):
    """Straight-line path from ``start`` to ``end`` moving ``drift_per_step`` in L1 per step.

    Row ``s`` is the law at step ``s + 1``; the path stays at ``end`` once reached.
    """
    if start.n_positions != end.n_positions:
        raise BadDrift("start and end must share n_positions")
    if drift_per_step < 0:
        raise BadDrift("drift_per_step must be >= 0")
    gap = float(np.abs(end.mass - start.mass).sum())
    if gap > drift_per_step * n_steps + 1e-12:
        raise BadDrift(f"L1 distance {gap:.4g} exceeds drift budget {drift_per_step * n_steps:.4g}")
    if gap == 0:
        return np.tile(start.mass, (n_steps, 1))
    frac = np.minimum(1.0, np.arange(n_steps) * drift_per_step / gap)
    return (1.0 - frac)[:, None] * start.mass + frac[:, None] * end.mass


def drift_trace(
    n_requests: int,
    start: OverlapHistogram,
    end: OverlapHistogram,
    drift_per_step: float,
    seed: int = 0,
):
    """Depth-mode trace sampled along :func:`drift_path`.

    Returns ``(requests, path)``; ``path[s]`` is the law that generated request ``s``.
    """
    if n_requests < 1:
        raise BadRange("n_requests must be >= 1")
    path = drift_path(start, end, n_requests, drift_per_step)
    rng = np.random.default_rng(seed)
    depths = sample_path(path, rng)
    n = start.n_positions
    reqs = [DepthRequest(i, int(d), n) for i, d in enumerate(depths)]
    return reqs, path


def sample_path(path: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One depth per row of ``path`` by inverse-CDF sampling (1-based)."""
    cdf = np.cumsum(path, axis=1)
    u = rng.random(path.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, path.shape[1] - 1) + 1


def save_path(path: np.ndarray, filename) -> None:
    with open(filename, "w") as f:
        json.dump([[float(x) for x in row] for row in path], f)
        f.write("\n")
