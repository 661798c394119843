"""Robust signed geometric tests.

``orient3d`` and ``in_sphere`` run a floating-point fast path guarded by an
error filter and only fall back to exact arithmetic when the filter cannot
certify the sign, so Zero results always come from the exact path.
``perturbed_in_sphere`` additionally resolves exact ties symbolically and
therefore never returns Zero.

Sign conventions: ``orient3d`` is the sign of the triple product
``(b-a) . ((c-a) x (d-a))``; ``in_sphere`` is Positive exactly when the
query point lies strictly inside the circumsphere of the positively
oriented tetrahedron (a, b, c, d).

All operations are pure and reentrant.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from . import kernels

Point3 = Sequence[float]

_U = 2.0 ** -53


class Sign(enum.IntEnum):
    NEGATIVE = -1
    ZERO = 0
    POSITIVE = 1


@dataclass(frozen=True)
class SubDeterminants:
    """The four 3x3 minors of the insphere matrix that depend only on the
    tetrahedron, plus the source tetrahedron (needed for the exact fallback
    of :func:`in_sphere_cached`).

    For any query point e, ``-(e-a).x*s1 + (e-a).y*s2 - (e-a).z*s3 +
    |e-a|^2*s4`` reproduces the 4x4 insphere determinant up to rounding;
    ``s4`` is the determinant of the edge-vector matrix, i.e. six times the
    signed volume.
    """

    s1: float
    s2: float
    s3: float
    s4: float
    tet: tuple


@dataclass(frozen=True)
class FilterBounds:
    """Static filter thresholds derived from a bounding-box extent.

    Any determinant whose magnitude exceeds the threshold has a certain
    sign for inputs confined to the box; smaller magnitudes defer to the
    per-call dynamic filter and finally to exact arithmetic.
    """

    orient: float
    insphere: float
    cached: float

    @classmethod
    def for_extent(cls, extent: float) -> "FilterBounds":
        L = float(extent)
        if not (L > 0.0) or not math.isfinite(L):
            raise ValueError("bounding box extent must be positive and finite")
        # worst-case permanents over the box: 6 L^3 (orient), 72 L^5 (insphere)
        return cls(
            orient=32.0 * _U * 6.0 * L ** 3,
            insphere=128.0 * _U * 72.0 * L ** 5,
            cached=64.0 * _U * 72.0 * L ** 5,
        )

    @classmethod
    def unbounded(cls) -> "FilterBounds":
        """No static stage; every call goes through the dynamic filter."""
        return cls(0.0, 0.0, 0.0)

    def as_tuple(self):
        return (self.orient, self.insphere, self.cached)


def _check(p: Point3, name: str):
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError(f"non-finite coordinate in point {name}")
    return x, y, z


def orient3d(a: Point3, b: Point3, c: Point3, d: Point3,
             backend: str = "auto") -> Sign:
    k = kernels.get_backend(backend)
    return Sign(k.orient3d_sign(*_check(a, "a"), *_check(b, "b"),
                                *_check(c, "c"), *_check(d, "d"), 0.0))


def in_sphere(a: Point3, b: Point3, c: Point3, d: Point3, e: Point3,
              backend: str = "auto") -> Sign:
    """Positive iff e is strictly inside the circumsphere of (a, b, c, d).

    Callers must orient the tetrahedron positively first; the sign is
    unspecified otherwise.
    """
    k = kernels.get_backend(backend)
    det = k.insphere_sign(*_check(a, "a"), *_check(b, "b"), *_check(c, "c"),
                          *_check(d, "d"), *_check(e, "e"), 0.0)
    return Sign(-det)


def compute_subdeterminants(a: Point3, b: Point3, c: Point3, d: Point3,
                            backend: str = "auto") -> SubDeterminants:
    k = kernels.get_backend(backend)
    ta = _check(a, "a"); tb = _check(b, "b")
    tc = _check(c, "c"); td = _check(d, "d")
    s1, s2, s3, s4 = k.subdets(*ta, *tb, *tc, *td)
    return SubDeterminants(s1, s2, s3, s4, (ta, tb, tc, td))


def in_sphere_cached(sub: SubDeterminants, a: Point3, e: Point3,
                     backend: str = "auto") -> Sign:
    """Same sign as :func:`in_sphere` on the cached tetrahedron and e.

    Uses the stored minors when the error filter certifies them; otherwise
    falls back to the full filtered/exact test.
    """
    k = kernels.get_backend(backend)
    ta, tb, tc, td = sub.tet
    te = _check(e, "e")
    # no bbox context here: certify the cached combination only by its own
    # dynamic term, anything marginal goes to the full path
    det = k.cached_insphere_sign(sub.s1, sub.s2, sub.s3, sub.s4,
                                 *ta, *tb, *tc, *td, *te, 0.0, 0.0)
    return Sign(-det)


def perturbed_in_sphere(a: Point3, b: Point3, c: Point3, d: Point3, e: Point3,
                        ids: Sequence[int], backend: str = "auto") -> Sign:
    """Insphere with symbolic perturbation: never Zero, deterministic.

    Exact ties are resolved from the five global vertex indices (ascending
    index order), so the outcome depends only on coordinates and indices.
    """
    if len(ids) != 5:
        raise ValueError("five vertex indices required")
    if len(set(int(i) for i in ids)) != 5:
        raise ValueError("duplicate input point: vertex indices must be distinct")
    k = kernels.get_backend(backend)
    det = k.insphere_sign_perturbed(
        *_check(a, "a"), *_check(b, "b"), *_check(c, "c"), *_check(d, "d"),
        *_check(e, "e"), int(ids[0]), int(ids[1]), int(ids[2]), int(ids[3]),
        int(ids[4]), 0.0)
    return Sign(-det)
