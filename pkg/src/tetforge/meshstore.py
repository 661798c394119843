"""Growable structure-of-arrays storage for vertices and tetrahedra.

Tetrahedron ``t`` owns four consecutive entries in the flat ``tet_v`` /
``tet_n`` arrays. Facet i is the facet opposite vertex i, and the adjacency
slot ``4*t + i`` stores the packed reference ``4*u + j`` of the twin facet
in the adjacent tetrahedron, so neighbor lookups and reciprocity need no
searching. The exterior is closed by ghost tetrahedra sharing the virtual
vertex ``GHOST``, kept in local slot 3.

Per-tetra scratch is a mode choice fixed per run: "subdet" caches the four
insphere minors (slot 3 sign-flipped so a positive value flags deletion),
"color" stores a 16-bit flag word instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ._pykern import DELETED_COLOR, FACET, GHOST, NONE64
from .predicates import FilterBounds
from . import exact

UINT32_MAX = GHOST


class DegenerateInput(ValueError):
    """All candidate points coplanar (or fewer than 4 distinct points)."""


def pack_ref(t: int, i: int) -> int:
    return 4 * t + i


def unpack_ref(ref: int) -> Tuple[int, int]:
    return ref >> 2, ref & 3


@dataclass
class MeshStore:
    pts: np.ndarray
    vscratch: np.ndarray
    vtx_tet: np.ndarray
    tet_v: np.ndarray
    tet_n: np.ndarray
    subdet: np.ndarray
    color: np.ndarray
    constrained: np.ndarray
    counters: np.ndarray
    n_vertices: int
    mode: str
    bounds: FilterBounds
    duplicates: List[int] = field(default_factory=list)
    unused_vertices: List[int] = field(default_factory=list)

    # -- construction -------------------------------------------------------

    @classmethod
    def empty(cls, n_vertices_cap: int, n_tets_cap: int, mode: str = "subdet",
              bounds: Optional[FilterBounds] = None) -> "MeshStore":
        if mode not in ("subdet", "color"):
            raise ValueError("mode must be 'subdet' or 'color'")
        use_sub = mode == "subdet"
        counters = np.zeros(4, dtype=np.int64)
        counters[1] = 1  # vertex-scratch stamp counter, 0 means untagged
        return cls(
            pts=np.zeros((n_vertices_cap, 3), dtype=np.float64),
            vscratch=np.zeros(n_vertices_cap, dtype=np.int64),
            vtx_tet=np.full(n_vertices_cap, NONE64, dtype=np.uint64),
            tet_v=np.full(4 * n_tets_cap, GHOST, dtype=np.uint32),
            tet_n=np.full(4 * n_tets_cap, NONE64, dtype=np.uint64),
            subdet=(np.zeros(4 * n_tets_cap) if use_sub else np.zeros(0)),
            color=(np.zeros(0, dtype=np.uint16) if use_sub
                   else np.full(n_tets_cap, DELETED_COLOR, dtype=np.uint16)),
            constrained=np.zeros(0, dtype=np.uint8),
            counters=counters,
            n_vertices=0,
            mode=mode,
            bounds=bounds or FilterBounds.unbounded(),
        )

    def enable_constraints(self):
        if len(self.constrained) != len(self.tet_v):
            self.constrained = np.zeros(len(self.tet_v), dtype=np.uint8)

    # -- sizes ---------------------------------------------------------------

    @property
    def tet_capacity(self) -> int:
        return len(self.tet_v) // 4

    @property
    def n_tets(self) -> int:
        """Reserved tetra slots (live + deleted + pooled)."""
        return int(self.counters[0])

    def live_mask(self) -> np.ndarray:
        n = self.n_tets
        if self.mode == "subdet":
            return self.subdet[3:4 * n:4] <= 0.0
        return self.color[:n] != DELETED_COLOR

    def ghost_mask(self) -> np.ndarray:
        return self.tet_v[3:4 * self.n_tets:4] == GHOST

    def live_tets(self) -> np.ndarray:
        return np.nonzero(self.live_mask())[0]

    def real_tets(self) -> np.ndarray:
        return np.nonzero(self.live_mask() & ~self.ghost_mask())[0]

    def real_tet_vertices(self) -> np.ndarray:
        """(n, 4) vertex ids of live non-ghost tetrahedra."""
        idx = self.real_tets()
        return self.tet_v.reshape(-1, 4)[idx].astype(np.int64)

    def is_deleted(self, t: int) -> bool:
        if self.mode == "subdet":
            return bool(self.subdet[4 * t + 3] > 0.0)
        return bool(self.color[t] == DELETED_COLOR)

    def is_ghost(self, t: int) -> bool:
        """True iff any vertex of t is the ghost sentinel."""
        base = 4 * t
        return bool((self.tet_v[base:base + 4] == GHOST).any())

    def live_bytes(self) -> int:
        """Bytes of live data: vertices plus live tetra records."""
        per_tet = 4 * 4 + 4 * 8 + (4 * 8 if self.mode == "subdet" else 2)
        n_live = int(self.live_mask().sum())
        per_vertex = 3 * 8 + 8
        return self.n_vertices * per_vertex + n_live * per_tet

    # -- mutation ------------------------------------------------------------

    def add_points(self, pts: np.ndarray) -> np.ndarray:
        """Append points, growing storage; returns their vertex ids."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        n = len(pts)
        start = self.n_vertices
        if start + n > len(self.pts):
            new_cap = max(2 * len(self.pts), start + n)
            self.pts = np.resize(self.pts, (new_cap, 3))
            self.vscratch = np.resize(self.vscratch, new_cap)
            grown = np.full(new_cap, NONE64, dtype=np.uint64)
            grown[:len(self.vtx_tet)] = self.vtx_tet
            self.vtx_tet = grown
        self.pts[start:start + n] = pts
        self.vscratch[start:start + n] = 0
        self.n_vertices = start + n
        return np.arange(start, start + n, dtype=np.uint32)

    def grow_tets(self, min_capacity: int):
        """Double tetra capacity (at least to ``min_capacity``).

        Callers must guarantee no kernel holds views of the old arrays: the
        parallel driver only grows inside a global pause.
        """
        new_cap = max(2 * self.tet_capacity, int(min_capacity), 64)
        old = self.tet_capacity

        def grow_flat(arr, fill, per=4):
            out = np.full(per * new_cap, fill, dtype=arr.dtype)
            out[:per * old] = arr
            return out

        self.tet_v = grow_flat(self.tet_v, GHOST)
        self.tet_n = grow_flat(self.tet_n, NONE64)
        if self.mode == "subdet":
            self.subdet = grow_flat(self.subdet, 0.0)
        else:
            self.color = grow_flat(self.color, DELETED_COLOR, per=1)
        if len(self.constrained):
            self.constrained = grow_flat(self.constrained, 0)

    def allocate_tets(self, count: int) -> np.ndarray:
        """Reserve ``count`` fresh tetra indices, flagged deleted until filled."""
        start = self.n_tets
        self.counters[0] = start + count
        if start + count > self.tet_capacity:
            self.grow_tets(start + count)
        idx = np.arange(start, start + count, dtype=np.int64)
        if self.mode == "subdet":
            self.subdet[4 * idx + 3] = 1.0
        else:
            self.color[idx] = DELETED_COLOR
        return idx

    def set_tet(self, t: int, verts, mark_live: bool = True):
        base = 4 * t
        for k in range(4):
            self.tet_v[base + k] = verts[k]
        if mark_live:
            if self.mode == "subdet":
                self._store_subdet(t)
            else:
                self.color[t] = 0

    def _store_subdet(self, t: int):
        from ._pykern import subdets as _subdets
        base = 4 * t
        if self.tet_v[base + 3] == GHOST:
            self.subdet[base:base + 3] = 0.0
            self.subdet[base + 3] = -1.0
            return
        a, b, c, d = (int(self.tet_v[base + k]) for k in range(4))
        p = self.pts
        s1, s2, s3, s4 = _subdets(
            p[a, 0], p[a, 1], p[a, 2], p[b, 0], p[b, 1], p[b, 2],
            p[c, 0], p[c, 1], p[c, 2], p[d, 0], p[d, 1], p[d, 2])
        self.subdet[base] = s1
        self.subdet[base + 1] = s2
        self.subdet[base + 2] = s3
        self.subdet[base + 3] = -s4

    def set_adjacent(self, f1: int, f2: int):
        """Pair two facet refs; reciprocity holds for the pair afterwards."""
        if f1 == f2:
            raise ValueError("cannot pair a facet with itself")
        self.tet_n[f1] = f2
        self.tet_n[f2] = f1


def _bounds_from_points(pts: np.ndarray) -> FilterBounds:
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        extent = max(1.0, float(np.abs(pts).max()))
    return FilterBounds.for_extent(extent)


def find_initial_tet(pts: np.ndarray, scan_order=None):
    """Ids of the first four usable points along ``scan_order``: distinct,
    non-collinear, then the first point off their plane."""
    n = len(pts)
    if n < 4:
        raise DegenerateInput("need at least 4 points")
    order = range(n) if scan_order is None else [int(v) for v in scan_order]
    it = iter(order)
    i0 = next(it)
    i1 = -1
    for j in it:
        if not np.array_equal(pts[j], pts[i0]):
            i1 = j
            break
    if i1 < 0:
        raise DegenerateInput("all points coincide")
    i2 = -1
    for j in it:
        if not exact.collinear(*pts[i0], *pts[i1], *pts[j]):
            i2 = j
            break
    if i2 < 0:
        raise DegenerateInput("all points collinear")
    i3 = -1
    orient = 0
    for j in it:
        orient = exact.orient3d_sign(*pts[i0], *pts[i1], *pts[i2], *pts[j])
        if orient != 0:
            i3 = j
            break
    if i3 < 0:
        raise DegenerateInput("degenerate input: all points coplanar")
    if orient < 0:
        i1, i2 = i2, i1
    return i0, i1, i2, i3


def init_first_tet(points: np.ndarray, mode: str = "subdet",
                   tet_capacity: Optional[int] = None, scan_order=None):
    """Mesh seeded with one real tetrahedron and four exterior ghosts.

    All input points are stored up front (ids equal input positions); the
    returned consumed ids form the positively oriented first tetrahedron.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(pts).all():
        raise ValueError("non-finite coordinates in input points")
    consumed = find_initial_tet(pts, scan_order)
    n = len(pts)
    cap = tet_capacity or max(64, int(7.5 * n) + 32)
    mesh = MeshStore.empty(n, cap, mode=mode, bounds=_bounds_from_points(pts))
    mesh.add_points(pts)

    t0 = 0
    mesh.counters[0] = 5
    mesh.set_tet(t0, consumed)
    ghosts = []
    for i in range(4):
        g = 1 + i
        la, lb, lc = FACET[i]
        verts = (consumed[la], consumed[lb], consumed[lc], GHOST)
        mesh.set_tet(g, verts)
        mesh.set_adjacent(pack_ref(t0, i), pack_ref(g, 3))
        ghosts.append(g)
    # ghost side facets pair up across shared hull edges
    half = {}
    for g in ghosts:
        for i in range(3):
            la, lb, lc = FACET[i]
            tri = [int(mesh.tet_v[4 * g + la]), int(mesh.tet_v[4 * g + lb]),
                   int(mesh.tet_v[4 * g + lc])]
            key = tuple(sorted(v for v in tri if v != GHOST))
            if key in half:
                mesh.set_adjacent(half.pop(key), pack_ref(g, i))
            else:
                half[key] = pack_ref(g, i)
    if half:
        raise AssertionError("unpaired ghost facets after initialization")
    for v in consumed:
        mesh.vtx_tet[v] = t0
    return mesh, consumed
