"""Replay request traces through a last-K prefix cache with sparse checkpoints.

Every request is matched against the cached entries by longest common
prefix, charged ``t - l`` replayed tokens on a hit (``t`` shared tokens,
``l`` the deepest stored checkpoint at or below ``t``), and then admitted as a
new entry whose checkpoints come from the current placement schedule. The
oldest entry is evicted once more than ``capacity`` are stored.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .distribution import OverlapHistogram
from .errors import EmptyTrace, InputError, PlannerError, SparseCacheError, TraceFormatError
from .estimator import DEFAULT_DECAY, DEFAULT_REFRESH, EstimatorState
from .placement import (
    DEFAULT_SIM_BLOCK,
    CheckpointSet,
    balanced_placement,
    clip_to_blocks,
    dp_optimal,
    place,
    reduction_from,
    reusable_depth,
)

SIM_STRATEGIES = ("none", "balanced", "block", "sqrt", "logarithmic", "dp", "dp-grid")
# strategies whose placement ignores the budget
BUDGET_FREE = ("none", "block", "sqrt")

DEFAULT_CAPACITY = 50


@dataclass(frozen=True)
class Request:
    id: int
    group: str
    tokens: tuple
    arrival_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(x) for x in self.tokens))
        if not self.tokens:
            raise InputError(f"request {self.id} has no tokens")
        if not self.arrival_time >= 0:
            raise InputError(f"request {self.id} has negative arrival_time")

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class DepthRequest:
    """A request known only by its overlap depth against a prefix of ``length`` tokens."""

    id: int
    overlap_depth: int
    length: int
    group: str = ""
    arrival_time: float = 0.0

    def __post_init__(self):
        if self.length < 1:
            raise InputError(f"request {self.id}: length must be >= 1")
        if not 0 <= self.overlap_depth <= self.length:
            raise InputError(f"request {self.id}: overlap_depth must lie in [0, length]")

    def __len__(self):
        return self.length


@dataclass(frozen=True)
class CacheEntry:
    tokens: tuple
    checkpoints: CheckpointSet
    insertion_index: int


@dataclass(frozen=True)
class StateCostModel:
    """Bytes per stored recurrent checkpoint and per cached KV token.

    The defaults describe an illustrative hybrid stack (24 recurrent layers,
    16 heads, 128-dim heads, 2-byte states; 6 attention layers with 4 KV heads)
    and only matter for the byte column.
    """

    recurrent_bytes_per_checkpoint: int = 24 * 16 * 128 * 128 * 2
    kv_bytes_per_token: int = 6 * 2 * 4 * 128 * 2

    def __post_init__(self):
        if self.recurrent_bytes_per_checkpoint < 0 or self.kv_bytes_per_token < 0:
            raise InputError("cost model sizes must be >= 0")

    def entry_bytes(self, length: int, slots: int) -> int:
        return slots * self.recurrent_bytes_per_checkpoint + length * self.kv_bytes_per_token


# ---------------------------------------------------------------------------
# Longest-prefix index
# ---------------------------------------------------------------------------


def _lcp(a: Sequence[int], b: Sequence[int]) -> int:
    n = min(len(a), len(b))
    if a[:n] == b[:n]:
        return n
    for i in range(n):
        if a[i] != b[i]:
            return i
    return n


class _Node:
    __slots__ = ("key", "children", "entries")

    def __init__(self, key=(), entries=None):
        self.key = key
        self.children = {}
        self.entries = entries if entries is not None else set()


class RadixIndex:
    """Compressed trie over token tuples.

    Each node records the insertion indices of every stored sequence passing
    through it, so the deepest node reached by a query names all entries that
    share the longest prefix.
    """

    def __init__(self):
        self.root = _Node()

    def insert(self, tokens: tuple, idx: int) -> None:
        node, pos = self.root, 0
        while pos < len(tokens):
            first = tokens[pos]
            child = node.children.get(first)
            if child is None:
                node.children[first] = _Node(tokens[pos:], {idx})
                return
            k = _lcp(child.key, tokens[pos:pos + len(child.key)])
            if k < len(child.key):
                mid = _Node(child.key[:k], set(child.entries))
                child.key = child.key[k:]
                mid.children[child.key[0]] = child
                node.children[first] = mid
                child = mid
            child.entries.add(idx)
            pos += k
            node = child

    def remove(self, tokens: tuple, idx: int) -> None:
        node, pos = self.root, 0
        while pos < len(tokens):
            first = tokens[pos]
            child = node.children[first]
            child.entries.discard(idx)
            if not child.entries:
                del node.children[first]
                return
            pos += len(child.key)
            node = child

    def match(self, tokens: Sequence[int]) -> Tuple[Optional[int], int]:
        """Most recent insertion index among the deepest matches, and the depth."""
        node, pos = self.root, 0
        best, depth = None, 0
        while pos < len(tokens):
            child = node.children.get(tokens[pos])
            if child is None:
                break
            k = _lcp(child.key, tokens[pos:pos + len(child.key)])
            best, depth = child, pos + k
            if k < len(child.key):
                break
            pos += k
            node = child
        if best is None:
            return None, 0
        return max(best.entries), depth


class CacheState:
    """FIFO cache holding the ``capacity`` most recently inserted entries.

    ``indexed=False`` skips the trie; matches must then be supplied by the
    caller (see :func:`match_trace`).
    """

    def __init__(self, capacity: int, indexed: bool = True):
        if capacity < 0:
            raise InputError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.entries: "OrderedDict[int, CacheEntry]" = OrderedDict()
        self.index = RadixIndex() if indexed else None
        self._next = 0

    def __len__(self):
        return len(self.entries)

    def match(self, tokens: Sequence[int]) -> Tuple[Optional[CacheEntry], int]:
        if self.index is None:
            raise SparseCacheError("cache built without an index")
        idx, depth = self.index.match(tokens)
        if idx is None:
            return None, 0
        return self.entries[idx], depth

    def insert(self, tokens: tuple, checkpoints: CheckpointSet) -> List[CacheEntry]:
        """Admit a new entry and return the entries evicted to make room."""
        idx = self._next
        self._next += 1
        if self.capacity == 0:
            return []
        entry = CacheEntry(tuple(tokens), checkpoints, idx)
        self.entries[idx] = entry
        if self.index is not None:
            self.index.insert(entry.tokens, idx)
        evicted = []
        while len(self.entries) > self.capacity:
            _, old = self.entries.popitem(last=False)
            if self.index is not None:
                self.index.remove(old.tokens, old.insertion_index)
            evicted.append(old)
        return evicted


def match_longest_prefix(cache: CacheState, request: Request) -> Tuple[Optional[CacheEntry], int]:
    return cache.match(request.tokens)


def match_trace(requests: Sequence[Request], capacity: int) -> List[Tuple[Optional[int], int]]:
    """Longest-prefix match of every request against the FIFO cache state before it.

    Admission is unconditional, so matches do not depend on checkpoint
    placement and can be shared across strategies and budgets.
    """
    cache = CacheState(capacity)
    out = []
    for r in requests:
        entry, t = cache.match(r.tokens)
        out.append((None if entry is None else entry.insertion_index, t))
        cache.insert(r.tokens, CheckpointSet(len(r.tokens)))
    return out


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------


class Planner:
    """Per-entry checkpoint schedules for a strategy, budget and block size.

    Schedules are memoized per prefix length until :meth:`refresh` installs a
    new histogram. ``dp`` falls back to balanced placement while no histogram
    is available or when the histogram has no mass within the entry.
    """

    def __init__(self, strategy: str, budget: int, block: int = DEFAULT_SIM_BLOCK, grid: bool = False):
        if strategy not in SIM_STRATEGIES:
            raise InputError(f"unknown strategy {strategy!r}; expected one of {SIM_STRATEGIES}")
        if budget < 0 or block < 1:
            raise InputError("budget must be >= 0 and block >= 1")
        self.grid = grid or strategy == "dp-grid"
        self.strategy = "dp" if strategy == "dp-grid" else strategy
        self.budget = int(budget)
        self.block = int(block)
        self.histogram: Optional[OverlapHistogram] = None
        self._support = np.empty(0, dtype=np.int64)
        self._memo = {}
        self._dp_memo = {}

    def refresh(self, histogram: Optional[OverlapHistogram]) -> None:
        self.histogram = histogram
        self._memo.clear()
        self._dp_memo.clear()
        if histogram is not None:
            self._support = np.flatnonzero(histogram.mass > 0) + 1

    def plan(self, length: int) -> CheckpointSet:
        got = self._memo.get(length)
        if got is None:
            try:
                got = clip_to_blocks(self._plan(length), self.block)
            except SparseCacheError as exc:
                raise PlannerError(f"planning failed for length {length}: {exc}") from exc
            self._memo[length] = got
        return got

    def _plan(self, length: int) -> CheckpointSet:
        m = min(self.budget, length)
        if self.strategy != "dp":
            return place(self.strategy, length, m, block=self.block)
        if self.histogram is None:
            return balanced_placement(length, m)
        # depths past the last positive-mass depth never change the optimum,
        # so entries of different lengths share one solve
        k = int(np.searchsorted(self._support, length, side="right"))
        if k == 0:
            return balanced_placement(length, m)
        n_eff = int(self._support[k - 1])
        m_eff = min(m, n_eff)
        key = (n_eff, m_eff)
        pos = self._dp_memo.get(key)
        if pos is None:
            h = self.histogram.truncate(n_eff)
            pos = dp_optimal(h, m_eff, self.block if self.grid else None).positions
            self._dp_memo[key] = pos
        return CheckpointSet(length, pos)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RequestRecord:
    id: int
    group: str
    overlap_depth: int
    reusable_depth: int
    recompute: int
    new_suffix: int
    hit: bool
    slots: int


RECORD_COLUMNS = ("id", "group", "overlap_depth", "reusable_depth", "recompute", "new_suffix", "hit")


@dataclass
class SimMetrics:
    records: List[RequestRecord] = field(default_factory=list)
    peak_bytes: int = 0
    clamped_depths: int = 0

    @property
    def n_requests(self) -> int:
        return len(self.records)

    @property
    def hits(self) -> int:
        return sum(r.hit for r in self.records)

    @property
    def total_overlap(self) -> int:
        return sum(r.overlap_depth for r in self.records)

    @property
    def total_recompute(self) -> int:
        return sum(r.recompute for r in self.records)

    @property
    def savings(self) -> float:
        t = self.total_overlap
        return 0.0 if t == 0 else 1.0 - self.total_recompute / t

    @property
    def reduction_factor(self) -> float:
        return reduction_from(self.total_overlap, self.total_recompute)

    @property
    def hit_rate(self) -> float:
        return self.hits / self.n_requests if self.records else 0.0

    @property
    def total_slots(self) -> int:
        return sum(r.slots for r in self.records)

    @property
    def mean_slots(self) -> float:
        return self.total_slots / self.n_requests if self.records else 0.0

    @property
    def mean_recompute(self) -> float:
        """Replayed tokens per hit."""
        h = self.hits
        return self.total_recompute / h if h else 0.0

    def summary(self) -> dict:
        red = self.reduction_factor
        return {
            "n_requests": self.n_requests,
            "hits": self.hits,
            "hit_rate": self.hit_rate,
            "total_overlap": self.total_overlap,
            "total_recompute": self.total_recompute,
            "no_cache_baseline": self.total_overlap,
            "savings": self.savings,
            "reduction_factor": None if math.isinf(red) else red,
            "mean_slots": self.mean_slots,
            "total_slots": self.total_slots,
            "peak_bytes": self.peak_bytes,
            "clamped_depths": self.clamped_depths,
        }

    def write_csv(self, f) -> None:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in self.records:
            w.writerow([r.id, r.group, r.overlap_depth, r.reusable_depth, r.recompute, r.new_suffix, int(r.hit)])
        w.writerow([
            "total", "", self.total_overlap,
            sum(r.reusable_depth for r in self.records),
            self.total_recompute,
            sum(r.new_suffix for r in self.records),
            self.hits,
        ])


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    capacity: int = DEFAULT_CAPACITY
    budget: int = 8
    block: int = DEFAULT_SIM_BLOCK
    strategy: str = "dp"
    decay: float = DEFAULT_DECAY
    refresh: int = DEFAULT_REFRESH
    grid: bool = False
    cost_model: StateCostModel = field(default_factory=StateCostModel)
    seed: int = 0
    max_depth: Optional[int] = None
    # planner uses this law instead of the online estimate when set
    fixed_histogram: Optional[OverlapHistogram] = None

    def __post_init__(self):
        if self.refresh < 1:
            raise InputError("refresh must be >= 1")
        if self.strategy not in SIM_STRATEGIES:
            raise InputError(f"unknown strategy {self.strategy!r}")


class Simulator:
    """Sequential serving loop; owns its cache, estimator and planner."""

    def __init__(self, config: SimConfig, max_depth: int, indexed: bool = True):
        self.config = config
        self.cache = CacheState(config.capacity, indexed=indexed)
        self.estimator = EstimatorState(max_depth, config.decay)
        self.planner = Planner(config.strategy, config.budget, config.block, config.grid)
        if config.fixed_histogram is not None:
            self.planner.refresh(config.fixed_histogram)
        self.metrics = SimMetrics()
        self._bytes = 0

    @classmethod
    def from_parts(cls, config, cache, planner, estimator) -> "Simulator":
        sim = cls.__new__(cls)
        sim.config, sim.cache, sim.planner, sim.estimator = config, cache, planner, estimator
        sim.metrics, sim._bytes = SimMetrics(), sum(
            config.cost_model.entry_bytes(len(e.tokens), len(e.checkpoints)) for e in cache.entries.values()
        )
        return sim

    def serve(self, request, match: Optional[Tuple[Optional[int], int]] = None) -> RequestRecord:
        if isinstance(request, DepthRequest):
            return self._serve_depth(request)
        if match is None:
            entry, t = self.cache.match(request.tokens)
        else:
            idx, t = match
            entry = None if idx is None else self.cache.entries[idx]
        hit = entry is not None and t >= 1
        ell = reusable_depth(entry.checkpoints, t) if hit else 0
        if hit:
            self._observe(t)
        checkpoints = self.planner.plan(len(request.tokens))
        evicted = self.cache.insert(request.tokens, checkpoints)
        cm = self.config.cost_model
        if self.config.capacity > 0:
            self._bytes += cm.entry_bytes(len(request.tokens), len(checkpoints))
        for old in evicted:
            self._bytes -= cm.entry_bytes(len(old.tokens), len(old.checkpoints))
        self.metrics.peak_bytes = max(self.metrics.peak_bytes, self._bytes)
        rec = RequestRecord(
            id=request.id,
            group=request.group,
            overlap_depth=t if hit else 0,
            reusable_depth=ell,
            recompute=t - ell if hit else 0,
            new_suffix=len(request.tokens) - (t if hit else 0),
            hit=hit,
            slots=len(checkpoints),
        )
        self.metrics.records.append(rec)
        if hit:
            self._maybe_refresh()
        return rec

    def _serve_depth(self, request: DepthRequest) -> RequestRecord:
        checkpoints = self.planner.plan(request.length)
        t = request.overlap_depth
        hit = t >= 1
        ell = reusable_depth(checkpoints, t) if hit else 0
        if hit:
            self._observe(t)
        self.metrics.peak_bytes = max(
            self.metrics.peak_bytes, self.config.cost_model.entry_bytes(request.length, len(checkpoints))
        )
        rec = RequestRecord(request.id, request.group, t, ell, t - ell, request.length - t, hit, len(checkpoints))
        self.metrics.records.append(rec)
        if hit:
            self._maybe_refresh()
        return rec

    def _observe(self, t):
        before = self.estimator.clamped
        self.estimator.observe(t)
        self.metrics.clamped_depths += self.estimator.clamped - before

    def _maybe_refresh(self):
        if self.config.fixed_histogram is not None:
            return
        if self.estimator.sample_count % self.config.refresh == 0:
            self.planner.refresh(self.estimator.snapshot())


def serve(cache: CacheState, request, planner: Planner, estimator: EstimatorState,
          refresh: int = DEFAULT_REFRESH):
    """One serving step on caller-owned state; returns ``(record, cache, estimator)``.

    ``cache``, ``planner`` and ``estimator`` are updated in place. The planner
    is re-solved when the estimator's sample count reaches a multiple of
    ``refresh``.
    """
    cfg = SimConfig(capacity=cache.capacity, budget=planner.budget, block=planner.block,
                    strategy=planner.strategy, grid=planner.grid, decay=estimator.decay,
                    refresh=refresh)
    sim = Simulator.from_parts(cfg, cache, planner, estimator)
    return sim.serve(request), cache, estimator


def _trace_max_depth(requests) -> int:
    return max(len(r) for r in requests)


def run_simulation(requests: Sequence, config: SimConfig, matches=None) -> SimMetrics:
    """Replay ``requests`` (sorted by arrival) and return per-request and aggregate metrics.

    ``matches`` may carry precomputed :func:`match_trace` output for the same
    trace and capacity.
    """
    if not requests:
        raise EmptyTrace("trace has no requests")
    depth_mode = isinstance(requests[0], DepthRequest)
    if any(isinstance(r, DepthRequest) != depth_mode for r in requests):
        raise InputError("trace mixes token and depth-mode requests")
    if any(b.arrival_time < a.arrival_time for a, b in zip(requests, requests[1:])):
        raise InputError("requests must be sorted by arrival_time")
    max_depth = config.max_depth or _trace_max_depth(requests)
    if depth_mode or matches is None:
        sim = Simulator(config, max_depth, indexed=not depth_mode)
        for r in requests:
            sim.serve(r)
    else:
        if len(matches) != len(requests):
            raise InputError("matches do not line up with requests")
        sim = Simulator(config, max_depth, indexed=False)
        for r, m in zip(requests, matches):
            sim.serve(r, m)
    return sim.metrics


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("strategy", "budget", "slots", "expected_recompute", "savings", "reduction", "bytes", "pareto")


@dataclass
class SweepRow:
    strategy: str
    budget: int
    slots: float
    expected_recompute: float
    savings: float
    reduction: float
    bytes: int
    pareto: bool = False
    hit_rate: float = 0.0


def _pareto_flags(rows: Sequence[SweepRow]) -> List[bool]:
    flags = []
    for a in rows:
        dominated = any(
            b.slots <= a.slots and b.savings >= a.savings and (b.slots < a.slots or b.savings > a.savings)
            for b in rows
        )
        flags.append(not dominated)
    return flags


def sweep(
    requests: Sequence,
    base_config: SimConfig,
    budgets: Sequence[int],
    strategies: Sequence[str],
) -> List[SweepRow]:
    """One simulation per (strategy, budget); rows sorted by strategy then budget.

    ``pareto`` marks rows not dominated in (fewer slots, higher savings) across
    the whole table.
    """
    if not budgets or not strategies:
        raise InputError("need at least one budget and one strategy")
    for s in strategies:
        if s not in SIM_STRATEGIES:
            raise InputError(f"unknown strategy {s!r}")
    depth_mode = isinstance(requests[0], DepthRequest) if requests else False
    matches = None if depth_mode or not requests else match_trace(requests, base_config.capacity)
    rows, done = [], {}
    for strategy in sorted(set(strategies)):
        for budget in sorted(set(budgets)):
            key = (strategy, None if strategy in BUDGET_FREE else budget)
            if key not in done:
                cfg = dataclasses.replace(base_config, strategy=strategy, budget=budget)
                done[key] = run_simulation(requests, cfg, matches)
            m = done[key]
            red = m.reduction_factor
            rows.append(SweepRow(strategy, budget, m.mean_slots, m.mean_recompute, m.savings, red,
                                 m.peak_bytes, hit_rate=m.hit_rate))
    for row, flag in zip(rows, _pareto_flags(rows)):
        row.pareto = flag
    return rows


def write_sweep_csv(rows: Iterable[SweepRow], f) -> None:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        red = "inf" if math.isinf(r.reduction) else repr(float(r.reduction))
        w.writerow([r.strategy, r.budget, repr(float(r.slots)), repr(float(r.expected_recompute)),
                    repr(float(r.savings)), red, r.bytes, int(r.pareto)])


# ---------------------------------------------------------------------------
# Trace files
# ---------------------------------------------------------------------------


def _parse_line(obj, lineno):
    if not isinstance(obj, dict):
        raise TraceFormatError("expected a JSON object", lineno)
    try:
        if "tokens" in obj:
            return Request(int(obj["id"]), str(obj.get("group", "")), tuple(obj["tokens"]),
                           float(obj.get("arrival_time", 0.0)))
        if "overlap_depth" in obj:
            return DepthRequest(int(obj["id"]), int(obj["overlap_depth"]), int(obj["length"]),
                                str(obj.get("group", "")), float(obj.get("arrival_time", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(str(exc), lineno) from None
    raise TraceFormatError("need either 'tokens' or 'overlap_depth'", lineno)


def read_trace(lines: Iterable[str]) -> list:
    out = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"invalid JSON ({exc.msg})", lineno) from None
        out.append(_parse_line(obj, lineno))
    if out and len({isinstance(r, DepthRequest) for r in out}) > 1:
        raise TraceFormatError("trace mixes token and depth-mode lines")
    return out


def load_trace(path) -> list:
    with open(path) as f:
        return read_trace(f)


def request_to_dict(r) -> dict:
    if isinstance(r, DepthRequest):
        return {"id": r.id, "overlap_depth": r.overlap_depth, "length": r.length}
    return {"id": r.id, "group": r.group, "tokens": list(r.tokens), "arrival_time": r.arrival_time}


def write_trace(requests: Iterable, f) -> None:
    for r in requests:
        f.write(json.dumps(request_to_dict(r)))
        f.write("\n")


def save_trace(requests: Iterable, path) -> None:
    with open(path, "w") as f:
        write_trace(requests, f)
