"""Exact-arithmetic signs for the geometric predicates.

Doubles are dyadic rationals, so scaling every coordinate of a predicate by
a common power of two turns the determinants into integer arithmetic, which
Python evaluates exactly. These routines are the slow path: they are only
reached when the floating-point filters cannot certify a sign, and they are
the reference the compiled expansion-arithmetic path is tested against.
"""

from __future__ import annotations


def _scale_to_ints(vals):
    """Map a flat list of finite doubles to integers by a shared power of two."""
    ratios = [v.as_integer_ratio() for v in vals]
    lcm_den = 1
    for _, den in ratios:
        if den > lcm_den:
            lcm_den = den  # denominators are powers of two, max == lcm
    return [num * (lcm_den // den) for num, den in ratios]


def _sign(x):
    if x > 0:
        return 1
    if x < 0:
        return -1
    return 0


def collinear(ax, ay, az, bx, by, bz, cx, cy, cz) -> bool:
    """True iff the three points are exactly collinear."""
    s = _scale_to_ints([ax, ay, az, bx, by, bz, cx, cy, cz])
    ux, uy, uz = s[3] - s[0], s[4] - s[1], s[5] - s[2]
    vx, vy, vz = s[6] - s[0], s[7] - s[1], s[8] - s[2]
    return (uy * vz - uz * vy == 0 and uz * vx - ux * vz == 0
            and ux * vy - uy * vx == 0)


def orient3d_sign(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz) -> int:
    """Exact sign of det [b-a; c-a; d-a]."""
    a = _scale_to_ints([ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz])
    bxa, bya, bza = a[3] - a[0], a[4] - a[1], a[5] - a[2]
    cxa, cya, cza = a[6] - a[0], a[7] - a[1], a[8] - a[2]
    dxa, dya, dza = a[9] - a[0], a[10] - a[1], a[11] - a[2]
    det = (bxa * (cya * dza - cza * dya)
           - bya * (cxa * dza - cza * dxa)
           + bza * (cxa * dya - cya * dxa))
    return _sign(det)


def insphere_det_sign(ax, ay, az, bx, by, bz, cx, cy, cz,
                      dx, dy, dz, ex, ey, ez) -> int:
    """Exact sign of the 4x4 insphere determinant (rows b-a .. e-a, lift last).

    Negative means e lies strictly inside the circumsphere of a positively
    oriented tetrahedron (a, b, c, d).
    """
    s = _scale_to_ints([ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                        ex, ey, ez])
    rows = []
    for i in (1, 2, 3, 4):
        px, py, pz = s[3 * i] - s[0], s[3 * i + 1] - s[1], s[3 * i + 2] - s[2]
        rows.append((px, py, pz, px * px + py * py + pz * pz))
    det = 0
    sign = 1
    for r in range(4):
        rest = [rows[i] for i in range(4) if i != r]
        (p0, p1, p2) = rest
        m3 = (p0[0] * (p1[1] * p2[2] - p1[2] * p2[1])
              - p0[1] * (p1[0] * p2[2] - p1[2] * p2[0])
              + p0[2] * (p1[0] * p2[1] - p1[1] * p2[0]))
        # expansion along the lift column (col 3): cofactor (-1)^(r+3)
        det += (sign if r % 2 == 1 else -sign) * rows[r][3] * m3
    return _sign(det)


def insphere_sos_sign(coords, ids) -> int:
    """Symbolically perturbed insphere determinant sign, never zero.

    ``coords`` is a flat tuple of 15 doubles (a, b, c, d, e), ``ids`` the five
    distinct global vertex indices. Ties of the exact determinant are broken
    by lowering each point's paraboloid lift by an infinitesimal that shrinks
    as the global index grows: the first non-vanishing orientation minor in
    ascending index order decides.
    """
    det = insphere_det_sign(*coords)
    if det != 0:
        return det
    pts = [(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]) for i in range(5)]
    for row in sorted(range(5), key=lambda i: ids[i]):
        rest = [pts[i] for i in range(5) if i != row]
        o = orient3d_sign(*rest[0], *rest[1], *rest[2], *rest[3])
        if o != 0:
            # lowered lift: sign of -(-1)^(row+3) * minor, minor = -orient3d(rest)
            return (-1 if row % 2 == 0 else 1) * o
    raise ValueError("degenerate five-point configuration with no resolving minor")
