"""Overlap-depth distributions over token depths ``1..N``."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import AllZero, BadDelta, BadLength, BadParams, InputError, LengthMismatch

NORMALIZATION_TOL = 1e-12

SHAPES = ("uniform", "end_spike", "multimodal", "head_heavy")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OverlapHistogram:
    """Probability mass over overlap depths ``1..n_positions``.

    Arrays are 0-indexed: ``mass[t - 1]`` is the probability of depth ``t``.
    ``prefix_mass[j - 1]`` is ``P_j`` and ``prefix_moment[j - 1]`` is
    ``T_j = sum_{t <= j} t * p_t``. Use :meth:`from_mass` to build one; the
    arrays are read-only.
    """

    n_positions: int
    mass: np.ndarray
    prefix_mass: np.ndarray
    prefix_moment: np.ndarray

    @classmethod
    def from_mass(cls, mass) -> "OverlapHistogram":
        m = np.array(mass, dtype=np.float64).reshape(-1)
        if m.size == 0:
            raise BadLength("histogram needs at least one position")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise InputError("mass entries must be finite and non-negative")
        total = m.sum()
        if total <= 0:
            raise AllZero("histogram has no mass")
        m = m / total
        depths = np.arange(1, m.size + 1, dtype=np.float64)
        prefix_mass = np.cumsum(m)
        prefix_moment = np.cumsum(depths * m)
        return cls(int(m.size), _frozen(m), _frozen(prefix_mass), _frozen(prefix_moment))

    @property
    def depths(self) -> np.ndarray:
        return np.arange(1, self.n_positions + 1)

    def mean(self) -> float:
        return float(self.prefix_moment[-1])

    def support_end(self) -> int:
        """Deepest depth carrying positive mass."""
        return int(np.flatnonzero(self.mass > 0)[-1]) + 1

    def truncate(self, n_positions: int) -> "OverlapHistogram":
        """Restrict to depths ``<= n_positions`` and renormalize.

        Extends with zero mass when ``n_positions`` exceeds the current length.
        Raises :class:`AllZero` if no mass survives.
        """
        if n_positions < 1:
            raise BadLength("n_positions must be >= 1")
        if n_positions >= self.n_positions:
            if n_positions == self.n_positions:
                return self
            pad = np.zeros(n_positions - self.n_positions)
            return OverlapHistogram.from_mass(np.concatenate([self.mass, pad]))
        return OverlapHistogram.from_mass(self.mass[:n_positions])

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        """Draw depths (1-based) i.i.d. from this histogram."""
        u = rng.random(size)
        idx = np.searchsorted(self.prefix_mass, u * self.prefix_mass[-1], side="right")
        return np.minimum(idx, self.n_positions - 1) + 1

    def to_dict(self) -> dict:
        return {"n": self.n_positions, "mass": [float(x) for x in self.mass]}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "OverlapHistogram":
        try:
            n = int(obj["n"])
            mass = obj["mass"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed histogram object: {exc}") from None
        if not isinstance(mass, list) or len(mass) != n:
            raise LengthMismatch(f"'mass' must be a list of length n={n}")
        return cls.from_mass(mass)

    def __repr__(self) -> str:
        return f"OverlapHistogram(n_positions={self.n_positions}, mean={self.mean():.4g})"


def histogram_from_counts(counts) -> OverlapHistogram:
    """Normalize non-negative per-depth counts into a histogram."""
    return OverlapHistogram.from_mass(counts)


def no_cache_baseline(h: OverlapHistogram) -> float:
    """Expected recurrent work with no checkpoints, ``E[T]``."""
    return float(h.prefix_moment[-1])


def tv_distance(p: OverlapHistogram, q: OverlapHistogram) -> float:
    """L1 distance ``sum_t |p_t - q_t|`` (twice the total variation)."""
    if p.n_positions != q.n_positions:
        raise LengthMismatch(f"{p.n_positions} != {q.n_positions}")
    return float(np.abs(p.mass - q.mass).sum())


def plugin_bound(n_samples: int, n_positions: int, delta: float) -> float:
    """High-probability L1 error bound for an n-sample empirical histogram.

    Holds with probability at least ``1 - delta``. Multiply by ``2 * n_positions``
    to bound the excess recompute of the plug-in schedule.
    """
    if not 0 < delta < 1:
        raise BadDelta(f"delta must lie in (0, 1), got {delta}")
    if n_samples < 1 or n_positions < 1:
        raise InputError("n_samples and n_positions must be >= 1")
    return math.sqrt(n_positions / n_samples) + math.sqrt(2.0 * math.log(1.0 / delta) / n_samples)


_DEFAULTS = {
    "uniform": {},
    "end_spike": {"spike_mass": 0.9, "spike_width": None},
    "head_heavy": {"head_mass": 0.8, "head_width": None},
    "multimodal": {"n_modes": 3, "mode_width": 0.05},
}


def _check_mass(name, value):
    if not 0 < value <= 1:
        raise BadParams(f"{name} must lie in (0, 1], got {value}")


def _check_width(name, value, n):
    if not 1 <= value <= n:
        raise BadParams(f"{name} must lie in [1, {n}], got {value}")


def synth_distribution(
    shape: str,
    n_positions: int,
    params: Optional[Mapping] = None,
    seed: int = 0,
) -> OverlapHistogram:
    """Synthetic overlap histogram of a named shape.

    ``end_spike`` puts ``spike_mass`` uniformly on the last ``spike_width``
    depths (a shared document read in full), ``head_heavy`` puts ``head_mass``
    on the first ``head_width`` depths with geometric decay (a shared short
    system prompt), and ``multimodal`` mixes ``n_modes`` discretized Gaussians
    with seeded centers and weights. Leftover mass is spread uniformly over all
    depths. These are parameterized stand-ins, not fitted to any dataset.
    """
    if shape not in _DEFAULTS:
        raise BadParams(f"unknown shape {shape!r}; expected one of {SHAPES}")
    n = int(n_positions)
    if n < 2:
        raise BadParams("synthetic shapes need n_positions >= 2")
    opts = dict(_DEFAULTS[shape])
    unknown = set(params or {}) - set(opts)
    if unknown:
        raise BadParams(f"unknown parameters for {shape}: {sorted(unknown)}")
    opts.update(params or {})
    depths = np.arange(1, n + 1, dtype=np.float64)

    if shape == "uniform":
        return OverlapHistogram.from_mass(np.full(n, 1.0 / n))

    if shape == "end_spike":
        mass_in = float(opts["spike_mass"])
        width = opts["spike_width"] or max(1, n // 100)
        _check_mass("spike_mass", mass_in)
        _check_width("spike_width", width, n)
        m = np.full(n, (1.0 - mass_in) / n)
        m[n - width:] += mass_in / width
        return OverlapHistogram.from_mass(m)

    if shape == "head_heavy":
        mass_in = float(opts["head_mass"])
        width = opts["head_width"] or max(1, n // 10)
        _check_mass("head_mass", mass_in)
        _check_width("head_width", width, n)
        decay = np.exp(-2.0 * np.arange(width) / width)
        m = np.full(n, (1.0 - mass_in) / n)
        m[:width] += mass_in * decay / decay.sum()
        return OverlapHistogram.from_mass(m)

    n_modes = int(opts["n_modes"])
    rel_width = float(opts["mode_width"])
    if n_modes < 1:
        raise BadParams("n_modes must be >= 1")
    if not 0 < rel_width <= 1:
        raise BadParams(f"mode_width must lie in (0, 1], got {rel_width}")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.05, 0.95, n_modes) * n
    weights = rng.dirichlet(np.full(n_modes, 2.0))
    sigma = max(1.0, rel_width * n)
    m = np.zeros(n)
    for c, w in zip(centers, weights):
        bump = np.exp(-0.5 * ((depths - c) / sigma) ** 2)
        m += w * bump / bump.sum()
    return OverlapHistogram.from_mass(m)


def load_histogram(path) -> OverlapHistogram:
    try:
        with open(path) as f:
            obj = json.load(f)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    return OverlapHistogram.from_dict(obj)


def save_histogram(h: OverlapHistogram, path) -> None:
    with open(path, "w") as f:
        json.dump(h.to_dict(), f)
        f.write("\n")
