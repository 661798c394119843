"""Spatial sorting along a closed space-filling curve.

Points are quantized onto a ``2^m`` per-axis grid (optionally warped by a
per-axis piecewise-linear compression and a cyclic index shift), indexed
along a closed curve, and sorted by a stable key/value radix sort. Shuffled
insertion rounds of geometrically increasing size keep cavity sizes bounded
during incremental insertion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels

MAX_DEPTH = 21  # 3*21 = 63 key bits
ROUND_BASE = 2048
ROUND_FACTOR = 7

_PHI64 = np.uint64(0x9E3779B97F4A7C15)


def splitmix_stream(seed: int, n: int) -> np.ndarray:
    """First n outputs of a splitmix-style 64-bit generator, vectorized."""
    x = (np.uint64(seed) + np.arange(1, n + 1, dtype=np.uint64) * _PHI64)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def shuffle_ids(n: int, seed: int) -> np.ndarray:
    """Deterministic random permutation of 0..n-1 (random-key sort)."""
    keys = splitmix_stream(seed, n)
    return np.argsort(keys, kind="stable").astype(np.uint32)


def choose_resolution(n: int, k: float) -> int:
    """Grid depth m = clamp(round(k * log2 n), 1, 21)."""
    if n < 1:
        raise ValueError("need at least one point")
    m = int(round(k * math.log2(n))) if n > 1 else 1
    return max(1, min(MAX_DEPTH, m))


def default_resolution(n: int) -> int:
    """Depth giving O(1) expected points per grid cell."""
    if n < 1:
        raise ValueError("need at least one point")
    m = math.ceil(math.log2(n) / 3.0) + 2 if n > 1 else 1
    return max(1, min(MAX_DEPTH, m))


@dataclass(frozen=True)
class GridTransform:
    """Per-axis piecewise-linear warp plus a cyclic shift of curve indices.

    Coordinates (normalized to [0,1)) below ``threshold`` are linearly
    compressed onto [0, factor), the rest expanded onto [factor, 1); the
    map is a strictly increasing bijection of [0,1) per axis. ``shift``
    rotates the closed curve's zero index.
    """

    threshold: tuple = (0.5, 0.5, 0.5)
    factor: tuple = (0.5, 0.5, 0.5)
    shift: int = 0

    @classmethod
    def identity(cls) -> "GridTransform":
        return cls()

    @property
    def is_identity(self) -> bool:
        return self.shift == 0 and all(
            t == q for t, q in zip(self.threshold, self.factor))

    def apply(self, u: float, axis: int) -> float:
        t = self.threshold[axis]
        q = self.factor[axis]
        if t == q:
            return u
        if u < t:
            return u * (q / t)
        return q + (u - t) * ((1.0 - q) / (1.0 - t))

    def invert(self, v: float, axis: int) -> float:
        t = self.threshold[axis]
        q = self.factor[axis]
        if t == q:
            return v
        if v < q:
            return v * (t / q)
        return t + (v - q) * ((1.0 - t) / (1.0 - q))

    @classmethod
    def random(cls, seed: int, m: int) -> "GridTransform":
        r = splitmix_stream(seed, 7)
        u = (r[:6].astype(np.float64) / 2.0 ** 64)
        thresholds = tuple(0.25 + 0.5 * float(x) for x in u[:3])
        factors = tuple(0.25 + 0.5 * float(x) for x in u[3:6])
        shift = int(r[6] & np.uint64((1 << (3 * m)) - 1))
        return cls(thresholds, factors, shift)


@dataclass(frozen=True)
class SfcConfig:
    """Curve configuration: bounding box, grid depth and transform."""

    lo: tuple
    hi: tuple
    m: int
    transform: GridTransform = field(default_factory=GridTransform.identity)

    def __post_init__(self):
        if not (1 <= self.m <= MAX_DEPTH):
            raise ValueError(f"grid depth m={self.m} outside [1, {MAX_DEPTH}]")
        for a in range(3):
            if not (self.hi[a] > self.lo[a]):
                raise ValueError("degenerate bounding box")

    @classmethod
    def from_points(cls, pts: np.ndarray, m: Optional[int] = None,
                    k: Optional[float] = None,
                    transform: Optional[GridTransform] = None) -> "SfcConfig":
        pts = np.asarray(pts, dtype=np.float64)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        # keep the box non-degenerate even for flat or tiny inputs
        pad = np.maximum(np.abs(hi - lo), np.abs(hi) + np.abs(lo) + 1.0) * 1e-9
        hi = np.where(hi > lo, hi, hi + pad)
        n = len(pts)
        if m is None:
            m = choose_resolution(n, k) if k is not None else default_resolution(n)
        return cls(tuple(float(v) for v in lo), tuple(float(v) for v in hi),
                   int(m), transform or GridTransform.identity())

    @property
    def n_cells(self) -> int:
        return 1 << (3 * self.m)

    def key_bits(self) -> int:
        return 3 * self.m

    def with_transform(self, transform: GridTransform) -> "SfcConfig":
        return SfcConfig(self.lo, self.hi, self.m, transform)

    def _kernel_args(self):
        lo = tuple(float(v) for v in self.lo)
        inv = tuple(1.0 / (self.hi[a] - self.lo[a]) for a in range(3))
        return (lo, inv, tuple(self.transform.threshold),
                tuple(self.transform.factor), self.m, self.transform.shift)


def moore_keys(pts: np.ndarray, cfg: SfcConfig, ids=None,
               backend: str = "auto") -> np.ndarray:
    """Curve key of every point (or of ``pts[ids]``)."""
    k = kernels.get_backend(backend)
    if ids is None:
        ids = np.arange(len(pts), dtype=np.uint32)
    else:
        ids = np.ascontiguousarray(ids, dtype=np.uint32)
    out = np.empty(len(ids), dtype=np.uint64)
    lo, inv, wt, wq, m, shift = cfg._kernel_args()
    k.moore_keys(np.ascontiguousarray(pts, dtype=np.float64), ids, out,
                 lo, inv, wt, wq, m, shift)
    return out


def moore_index(p: Sequence[float], cfg: SfcConfig,
                backend: str = "auto") -> int:
    """Curve index of one point; raises for points outside the box."""
    for a in range(3):
        if not (cfg.lo[a] <= p[a] <= cfg.hi[a]):
            raise ValueError(f"point outside bounding box on axis {a}")
    pts = np.asarray([p], dtype=np.float64)
    return int(moore_keys(pts, cfg, backend=backend)[0])


def radix_sort_pairs(keys, vals, key_bits: Optional[int] = None,
                     workers: int = 1, backend: str = "auto"):
    """Stable ascending sort of (key, value) pairs on short integer keys."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    vals = np.ascontiguousarray(vals, dtype=np.uint64)
    if len(keys) != len(vals):
        raise ValueError("keys and values must have equal length")
    if key_bits is None:
        key_bits = 64
    k = kernels.get_backend(backend)
    return k.radix_sort_pairs(keys, vals, int(key_bits), int(workers))


@dataclass(frozen=True)
class BrioPlan:
    """Rounds of a biased randomized insertion order.

    ``order`` is the shuffled id sequence; ``boundaries[i]`` is the
    exclusive end offset of round i within it. Round capacities grow
    geometrically (2048, then x7 per round), the last round takes the
    remainder.
    """

    n: int
    boundaries: tuple
    order: np.ndarray

    def round_slices(self):
        start = 0
        for b in self.boundaries:
            yield start, b
            start = b


def brio_plan(n: int, seed: int = 0) -> BrioPlan:
    if n < 0:
        raise ValueError("negative point count")
    bounds = []
    cap = ROUND_BASE
    while bounds == [] or bounds[-1] < n:
        bounds.append(min(n, cap))
        cap *= ROUND_FACTOR
        if bounds[-1] == n:
            break
    if n == 0:
        bounds = [0]
    return BrioPlan(n, tuple(bounds), shuffle_ids(n, seed))


def sort_round(pts: np.ndarray, cfg: SfcConfig, ids=None, workers: int = 1,
               backend: str = "auto") -> np.ndarray:
    """Order point ids along the curve; ties keep input order."""
    if ids is None:
        ids = np.arange(len(pts), dtype=np.uint32)
    ids = np.ascontiguousarray(ids, dtype=np.uint32)
    if len(ids) <= 1:
        return ids.copy()
    keys = moore_keys(pts, cfg, ids=ids, backend=backend)
    _, vals = radix_sort_pairs(keys, ids.astype(np.uint64),
                               key_bits=cfg.key_bits(), workers=workers,
                               backend=backend)
    return vals.astype(np.uint32)
