"""Deterministic, splittable random number generation keyed by semantic coordinates.

Every random draw in this package flows through an explicit stream whose seed
is a pure function of a :class:`SeedKey`. A key addresses a draw by purpose
(what the value is for) and coordinates (repetition, estimator, layer, row,
col), so any weight, bias, mask position, or shuffle order can be regenerated
in isolation, in any order, on any platform.

Mask layouts and frozen weight values are shared across an ensemble: their
purposes mask out the repetition and estimator coordinates before mixing, so
every ensemble member sees identical masks and frozen values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_U64_GOLDEN = np.uint64(_GOLDEN)
_INV_2_53 = 2.0 ** -53


class Purpose(IntEnum):
    """What a seeded draw is used for. Determines the key's dependency set."""

    MASK_POSITIONS = 1  # which columns are frozen; depends on (layer, row) only
    FROZEN_VALUE = 2    # frozen weight value; depends on (layer, row, col) only
    FREE_WEIGHT = 3     # trainable weight init; all coordinates
    BIAS = 4            # bias init; all coordinates (position in row)
    GATE_WEIGHT = 5     # mixture gate weight init
    GATE_BIAS = 6       # mixture gate bias init
    SHUFFLE = 7         # per-epoch batch order (epoch in row)
    GUMBEL = 8          # gate noise during training/inference
    SPLIT = 9           # dataset train/val/test assignment
    SYNTH = 10          # synthetic dataset generation


# Purposes whose seeds must not depend on repetition or estimator, so the
# derived values are identical across all ensemble members and repetitions.
SHARED_PURPOSES = frozenset({Purpose.MASK_POSITIONS, Purpose.FROZEN_VALUE})


@dataclass(frozen=True)
class SeedKey:
    """Semantic address of a random draw."""

    purpose: Purpose
    repetition: int = 0
    estimator: int = 0
    layer: int = 1
    row: int = 0
    col: int = 0

    def __post_init__(self):
        if self.layer < 1:
            raise ValueError(f"layer must be positive, got {self.layer}")
        for name in ("repetition", "estimator", "row", "col"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective, avalanche-quality 64-bit mix."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized :func:`_mix64` over a uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_seed(key: SeedKey) -> int:
    """Derive the 64-bit seed for a key.

    Pure function of the key fields. Coordinates outside the purpose's
    dependency set are zeroed before mixing, so e.g. two MASK_POSITIONS keys
    that differ only in repetition or estimator derive the same seed.
    """
    rep, est = key.repetition, key.estimator
    if key.purpose in SHARED_PURPOSES:
        rep = est = 0
    h = _mix64(int(key.purpose) * 0xA0761D6478BD642F)
    for field in (rep, est, key.layer, key.row, key.col):
        h = _mix64((h + _GOLDEN + field) & MASK64)
    return h


def derive_seed_grid(
    purpose: Purpose,
    repetition: int,
    estimator: int,
    layer: int,
    rows: np.ndarray,
    cols: np.ndarray,
) -> np.ndarray:
    """Vectorized :func:`derive_seed` over broadcast row/col coordinates.

    Bit-identical to calling derive_seed per (row, col) pair; the scalar and
    vector mixers share the same absorb chain.
    """
    if purpose in SHARED_PURPOSES:
        repetition = estimator = 0
    h = _mix64(int(purpose) * 0xA0761D6478BD642F)
    for field in (repetition, estimator, layer):
        h = _mix64((h + _GOLDEN + field) & MASK64)
    rows64 = np.asarray(rows, dtype=np.uint64)
    cols64 = np.asarray(cols, dtype=np.uint64)
    hr = _mix64_array(np.uint64((h + _GOLDEN) & MASK64) + rows64)
    return _mix64_array(hr + _U64_GOLDEN + cols64)


@dataclass
class RngStream:
    """SplitMix64 output sequence from a 64-bit state.

    Value semantics: copy the dataclass to fork. The sequence for a given
    starting state is bit-reproducible across platforms.
    """

    state: int

    @classmethod
    def from_key(cls, key: SeedKey) -> "RngStream":
        return cls(derive_seed(key))

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & MASK64
        return _mix64(self.state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform draw in [lo, hi)."""
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
        u = (self.next_u64() >> 11) * _INV_2_53
        value = lo + (hi - lo) * u
        if value >= hi:  # fp rounding can reach hi for extreme ranges
            value = math.nextafter(hi, lo)
        return value

    def standard_normal(self) -> float:
        """N(0, 1) draw via Box-Muller (cosine branch, two uniforms per call)."""
        u1 = ((self.next_u64() >> 11) + 1) * _INV_2_53  # (0, 1], keeps log finite
        u2 = (self.next_u64() >> 11) * _INV_2_53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((1 << 64) // n) * n
        x = self.next_u64()
        while x >= limit:
            x = self.next_u64()
        return x % n

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from [0, n), uniform over subsets.

        Partial Fisher-Yates: exact uniformity, O(n) memory, O(k) draws.
        """
        if k > n:
            raise ValueError(f"cannot sample {k} items from {n}")
        pool = list(range(n))
        for j in range(k):
            r = j + self.randbelow(n - j)
            pool[j], pool[r] = pool[r], pool[j]
        return pool[:k]

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation of range(n), computed in bulk.

        Sorts n vectorized uniform keys; ties (probability ~n^2/2^53) are
        broken by stable sort, keeping the result deterministic.
        """
        keys = self.uniform_block(n)
        return np.argsort(keys, kind="stable")

    def uniform_block(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Next n uniform draws as a vector, advancing state as n scalar calls."""
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
        states = np.uint64(self.state) + _U64_GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        self.state = (self.state + n * _GOLDEN) & MASK64
        u = (_mix64_array(states) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        values = lo + (hi - lo) * u
        return np.minimum(values, math.nextafter(hi, lo))


def bulk_uniform(seeds: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """First uniform draw of a fresh stream per seed; matches scalar bit-exactly."""
    if not lo < hi:
        raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
    u = (_mix64_array(seeds + _U64_GOLDEN) >> np.uint64(11)).astype(np.float64) * _INV_2_53
    values = lo + (hi - lo) * u
    return np.minimum(values, math.nextafter(hi, lo))


def bulk_standard_normal(seeds: np.ndarray) -> np.ndarray:
    """First Box-Muller draw of a fresh stream per seed."""
    u1 = ((_mix64_array(seeds + _U64_GOLDEN) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
    two = seeds + _U64_GOLDEN + _U64_GOLDEN
    u2 = (_mix64_array(two) >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
