"""Pure-Python kernel backend.

Implements the same array-level contract as the compiled backend
(``tetforge._ckern``): geometric predicate signs, curve key computation,
radix sorting and the point-insertion kernel. Everything operates on the
flat numpy arrays owned by :class:`tetforge.meshstore.MeshStore`, handed
over in a context dict (see :func:`tetforge.engine.make_context`), so the
two backends are interchangeable. This one is the readable reference; the
compiled one is the fast twin.

Sign conventions (shared by both backends):

* ``orient3d`` is the sign of ``det [b-a; c-a; d-a]``; the canonical
  positively oriented tetrahedron is (0,0,0),(1,0,0),(0,1,0),(0,0,1).
* the insphere determinant is the 4x4 over rows ``b-a .. e-a`` with the
  squared norm as last column; it is NEGATIVE when e lies strictly inside
  the circumsphere of a positively oriented (a,b,c,d).
"""

from __future__ import annotations

import numpy as np

from . import exact
from ._tables import W_MOORE, C_MOORE, W_HILBERT, C_HILBERT

GHOST = 0xFFFFFFFF
NONE64 = 0xFFFFFFFFFFFFFFFF
DELETED_COLOR = 0xFFFF

# facet opposite local vertex i, ordered so the triple faces outward from a
# positively oriented tetrahedron
FACET = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))

_U = 2.0 ** -53  # unit roundoff
O3D_DYN = 32.0 * _U
ISP_DYN = 128.0 * _U
CACHED_DYN = 16.0 * _U

# batch statuses
OK = 0
NEED_GROW = 1
WS_OVERFLOW = 2
WALK_STUCK = 3

# per-point outcomes (disjoint from the statuses above)
INSERTED = 10
DUP_SKIP = 11
AB_WALK = 12
AB_CAVITY = 13
AB_CONSTR = 14
AB_PROX = 15
AB_STAR = 16

# register indices (int64 scratch shared with the orchestrator)
R_POOL_N = 0
R_LAST = 1
R_CURSOR = 2
R_SERIAL = 3
R_PEND_START = 4
R_PEND_COUNT = 5
R_N_FAIL = 6
R_N_DUP = 7
R_LAST_REAL = 8

# stats indices
S_WALK_STEPS = 0
S_INSERTED = 1
S_DELETED = 2
S_CREATED = 3
S_INSPHERE = 4
S_DUP = 5
S_AB_WALK = 6
S_AB_CAV = 7
S_AB_CONSTR = 8
S_AB_PROX = 9
S_AB_STAR = 10
S_EXACT = 11


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# predicates
# ---------------------------------------------------------------------------

def orient3d_sign(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                  static_bound=0.0):
    bdx = bx - ax; bdy = by - ay; bdz = bz - az
    cdx = cx - ax; cdy = cy - ay; cdz = cz - az
    ddx = dx - ax; ddy = dy - ay; ddz = dz - az
    m0 = cdy * ddz - cdz * ddy
    m1 = cdx * ddz - cdz * ddx
    m2 = cdx * ddy - cdy * ddx
    det = bdx * m0 - bdy * m1 + bdz * m2
    if static_bound > 0.0 and (det > static_bound or det < -static_bound):
        return 1 if det > 0.0 else -1
    perm = (abs(bdx) * (abs(cdy * ddz) + abs(cdz * ddy))
            + abs(bdy) * (abs(cdx * ddz) + abs(cdz * ddx))
            + abs(bdz) * (abs(cdx * ddy) + abs(cdy * ddx)))
    err = O3D_DYN * perm
    if det > err or -det > err:
        return 1 if det > 0.0 else -1
    return exact.orient3d_sign(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz)


def _subdets_perm(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz):
    """The four tetra-only 3x3 minors plus their absolute-value mirrors."""
    bdx = bx - ax; bdy = by - ay; bdz = bz - az
    cdx = cx - ax; cdy = cy - ay; cdz = cz - az
    ddx = dx - ax; ddy = dy - ay; ddz = dz - az
    bl = bdx * bdx + bdy * bdy + bdz * bdz
    cl = cdx * cdx + cdy * cdy + cdz * cdz
    dl = ddx * ddx + ddy * ddy + ddz * ddz

    czdl = cdz * dl; dzcl = ddz * cl
    cydl = cdy * dl; dycl = ddy * cl
    cxdl = cdx * dl; dxcl = ddx * cl
    cydz = cdy * ddz; czdy = cdz * ddy
    cxdz = cdx * ddz; czdx = cdz * ddx
    cxdy = cdx * ddy; cydx = cdy * ddx

    s1 = bdy * (czdl - dzcl) - bdz * (cydl - dycl) + bl * (cydz - czdy)
    s2 = bdx * (czdl - dzcl) - bdz * (cxdl - dxcl) + bl * (cxdz - czdx)
    s3 = bdx * (cydl - dycl) - bdy * (cxdl - dxcl) + bl * (cxdy - cydx)
    s4 = bdx * (cydz - czdy) - bdy * (cxdz - czdx) + bdz * (cxdy - cydx)

    p1 = (abs(bdy) * (abs(czdl) + abs(dzcl))
          + abs(bdz) * (abs(cydl) + abs(dycl))
          + bl * (abs(cydz) + abs(czdy)))
    p2 = (abs(bdx) * (abs(czdl) + abs(dzcl))
          + abs(bdz) * (abs(cxdl) + abs(dxcl))
          + bl * (abs(cxdz) + abs(czdx)))
    p3 = (abs(bdx) * (abs(cydl) + abs(dycl))
          + abs(bdy) * (abs(cxdl) + abs(dxcl))
          + bl * (abs(cxdy) + abs(cydx)))
    p4 = (abs(bdx) * (abs(cydz) + abs(czdy))
          + abs(bdy) * (abs(cxdz) + abs(czdx))
          + abs(bdz) * (abs(cxdy) + abs(cydx)))
    return s1, s2, s3, s4, p1, p2, p3, p4


def subdets(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz):
    return _subdets_perm(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz)[:4]


def insphere_sign(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                  ex, ey, ez, static_bound=0.0):
    """Sign of the insphere determinant (negative = strictly inside)."""
    s1, s2, s3, s4, p1, p2, p3, p4 = _subdets_perm(
        ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz)
    edx = ex - ax; edy = ey - ay; edz = ez - az
    el = edx * edx + edy * edy + edz * edz
    det = -edx * s1 + edy * s2 - edz * s3 + el * s4
    if static_bound > 0.0 and (det > static_bound or det < -static_bound):
        return 1 if det > 0.0 else -1
    perm = abs(edx) * p1 + abs(edy) * p2 + abs(edz) * p3 + el * p4
    err = ISP_DYN * perm
    if det > err or -det > err:
        return 1 if det > 0.0 else -1
    return exact.insphere_det_sign(ax, ay, az, bx, by, bz, cx, cy, cz,
                                   dx, dy, dz, ex, ey, ez)


def insphere_sign_perturbed(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                            ex, ey, ez, ia, ib, ic, id_, ie, static_bound=0.0):
    """Never-zero insphere determinant sign with symbolic tie-breaking."""
    s1, s2, s3, s4, p1, p2, p3, p4 = _subdets_perm(
        ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz)
    edx = ex - ax; edy = ey - ay; edz = ez - az
    el = edx * edx + edy * edy + edz * edz
    det = -edx * s1 + edy * s2 - edz * s3 + el * s4
    if static_bound > 0.0 and (det > static_bound or det < -static_bound):
        return 1 if det > 0.0 else -1
    perm = abs(edx) * p1 + abs(edy) * p2 + abs(edz) * p3 + el * p4
    err = ISP_DYN * perm
    if det > err or -det > err:
        return 1 if det > 0.0 else -1
    return exact.insphere_sos_sign(
        (ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz, ex, ey, ez),
        (ia, ib, ic, id_, ie))


def cached_insphere_sign(s1, s2, s3, s4, ax, ay, az, bx, by, bz, cx, cy, cz,
                         dx, dy, dz, ex, ey, ez, static_bound, cached_bound):
    """Insphere determinant sign from cached minors, full path on doubt."""
    edx = ex - ax; edy = ey - ay; edz = ez - az
    el = edx * edx + edy * edy + edz * edz
    t1 = edx * s1; t2 = edy * s2; t3 = edz * s3; t4 = el * s4
    det = -t1 + t2 - t3 + t4
    err = cached_bound + CACHED_DYN * (abs(t1) + abs(t2) + abs(t3) + abs(t4))
    if det > err or -det > err:
        return 1 if det > 0.0 else -1
    return insphere_sign(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                         ex, ey, ez, static_bound)


# ---------------------------------------------------------------------------
# space-filling-curve keys
# ---------------------------------------------------------------------------

def _cell_key(cx, cy, cz, m):
    lvl = m - 1
    cell = (((cx >> lvl) & 1)
            | (((cy >> lvl) & 1) << 1)
            | (((cz >> lvl) & 1) << 2))
    w = int(W_MOORE[cell])
    state = int(C_MOORE[w])
    d = w
    for lvl in range(m - 2, -1, -1):
        cell = (((cx >> lvl) & 1)
                | (((cy >> lvl) & 1) << 1)
                | (((cz >> lvl) & 1) << 2))
        w = int(W_HILBERT[state * 8 + cell])
        d = (d << 3) | w
        state = int(C_HILBERT[state * 8 + w])
    return d


def moore_keys(pts, ids, out, lo, inv_ext, warp_t, warp_q, m, shift):
    """Curve keys of ``pts[ids]`` (ids may be None for all rows)."""
    scale = 1 << m
    mask = (1 << (3 * m)) - 1
    n = len(out)
    warped = any(warp_t[a] != warp_q[a] for a in range(3))
    cell = [0, 0, 0]
    for j in range(n):
        i = j if ids is None else int(ids[j])
        for a in range(3):
            u = (float(pts[i, a]) - lo[a]) * inv_ext[a]
            if warped:
                t = warp_t[a]; q = warp_q[a]
                if u < t:
                    u = u * (q / t)
                else:
                    u = q + (u - t) * ((1.0 - q) / (1.0 - t))
            c = int(u * scale)
            if c < 0:
                c = 0
            elif c >= scale:
                c = scale - 1
            cell[a] = c
        d = _cell_key(cell[0], cell[1], cell[2], m)
        out[j] = (d + shift) & mask


# ---------------------------------------------------------------------------
# radix sort
# ---------------------------------------------------------------------------

def radix_sort_pairs(keys, vals, key_bits, workers=1):
    """Stable LSD radix sort of (key, value) pairs, byte digits.

    Digit passes where every key shares the same digit are skipped; the
    ``workers`` argument matters only for the compiled twin.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    vals = np.asarray(vals, dtype=np.uint64)
    for shift in range(0, key_bits, 8):
        digits = ((keys >> np.uint64(shift)) & np.uint64(0xFF)).astype(np.uint8)
        if digits.size == 0 or int(digits.min()) == int(digits.max()):
            continue
        order = np.argsort(digits, kind="stable")
        keys = keys[order]
        vals = vals[order]
    return keys, vals


# ---------------------------------------------------------------------------
# insertion engine
# ---------------------------------------------------------------------------

class Engine:
    """One point-insertion pass over a mesh; state comes from a context dict
    built by :func:`tetforge.engine.make_context`."""

    def __init__(self, ctx):
        self.pts = ctx["pts"]
        self.vscratch = ctx["vscratch"]
        self.vtx_tet = ctx["vtx_tet"]
        self.tet_v = ctx["tet_v"]
        self.tet_n = ctx["tet_n"]
        self.subdet = ctx["subdet"]
        self.color = ctx["color"]
        self.constrained = ctx["constrained"]
        self.counters = ctx["counters"]
        self.q = ctx["queue"]
        self.deleted = ctx["deleted"]
        self.bf_v = ctx["bf_verts"]
        self.bf_out = ctx["bf_out"]
        self.bf_in = ctx["bf_in"]
        self.lookup = ctx["lookup"]
        self.lverts = ctx["local_verts"]
        self.pool = ctx["pool"]
        self.reg = ctx["reg"]
        self.stats = ctx["stats"]
        self.use_subdet = bool(ctx["use_subdet"])
        self.ownership = bool(ctx["ownership"])
        self.refine_mode = bool(ctx["refine_mode"])
        self.part_id = ctx["part_id"]
        self.ghost_part = int(ctx["ghost_part"])
        self.my_part = int(ctx["my_part"])
        self.point_h = ctx["point_h"]
        self.prox_factor = float(ctx["prox_factor"])
        self.o3d_static, self.isp_static, self.cached_static = ctx["bounds"]
        self.audit_every = int(ctx["audit_every"])
        self.audit_log = ctx["audit_log"]
        self.chunk = int(ctx["chunk"])
        self.resv_lock = ctx.get("resv_lock")
        self.capacity = (len(self.subdet) // 4 if self.use_subdet
                         else len(self.color))
        self.n_bf = 0
        self.n_del = 0

    # -- small helpers ----------------------------------------------------

    def is_deleted(self, t):
        if self.use_subdet:
            return self.subdet[4 * t + 3] > 0.0
        return self.color[t] == DELETED_COLOR

    def mark_deleted(self, t):
        if self.use_subdet:
            self.subdet[4 * t + 3] = 1.0
        else:
            self.color[t] = DELETED_COLOR

    def unmark_deleted(self, t):
        """Rollback of mark_deleted; recomputes the cached minors if needed."""
        if self.use_subdet:
            self.store_subdet(t)
        else:
            self.color[t] = 0

    def store_subdet(self, t):
        v = self.tet_v
        if not self.use_subdet:
            return
        if v[4 * t + 3] == GHOST:
            self.subdet[4 * t] = 0.0
            self.subdet[4 * t + 1] = 0.0
            self.subdet[4 * t + 2] = 0.0
            self.subdet[4 * t + 3] = -1.0
            return
        p = self.pts
        a, b, c, d = (int(v[4 * t + k]) for k in range(4))
        s1, s2, s3, s4 = subdets(
            p[a, 0], p[a, 1], p[a, 2], p[b, 0], p[b, 1], p[b, 2],
            p[c, 0], p[c, 1], p[c, 2], p[d, 0], p[d, 1], p[d, 2])
        self.subdet[4 * t] = s1
        self.subdet[4 * t + 1] = s2
        self.subdet[4 * t + 2] = s3
        # sign flipped so that a positive slot flags a deleted tetrahedron
        self.subdet[4 * t + 3] = -s4

    def owner_ok(self, t):
        """True when this thread may touch tetrahedron t."""
        if not self.ownership:
            return True
        mine = 0
        for k in range(4):
            v = int(self.tet_v[4 * t + k])
            pid = self.ghost_part if v == GHOST else int(self.part_id[v])
            if pid == self.my_part:
                mine += 1
        ok = mine >= 3
        if self.audit_every > 0:
            self._audit(t, ok)
        return ok

    def _audit(self, t, ok):
        log = self.audit_log
        log[1] += 1
        n = int(log[0])
        if log[1] % self.audit_every == 0 and 3 + 2 * n + 1 < len(log):
            log[3 + 2 * n] = t
            log[3 + 2 * n + 1] = self.my_part if ok else -1 - self.my_part
            log[0] = n + 1

    def point(self, i):
        return float(self.pts[i, 0]), float(self.pts[i, 1]), float(self.pts[i, 2])

    # -- geometric tests ---------------------------------------------------

    def tet_conflict(self, t, px, py, pz, pid):
        """Perturbed circumsphere test; ghost tetrahedra use the composite
        half-space + circumdisk rule."""
        v = self.tet_v
        if v[4 * t + 3] == GHOST:
            a, b, c = (int(v[4 * t + k]) for k in range(3))
            ax, ay, az = self.point(a)
            bx, by, bz = self.point(b)
            cx, cy, cz = self.point(c)
            o = orient3d_sign(ax, ay, az, bx, by, bz, cx, cy, cz, px, py, pz,
                              self.o3d_static)
            if o != 0:
                return o > 0
            u = int(self.tet_n[4 * t + 3]) >> 2
            return self.real_conflict(u, px, py, pz, pid)
        return self.real_conflict(t, px, py, pz, pid)

    def real_conflict(self, t, px, py, pz, pid):
        self.stats[S_INSPHERE] += 1
        v = self.tet_v
        a, b, c, d = (int(v[4 * t + k]) for k in range(4))
        p = self.pts
        args = (float(p[a, 0]), float(p[a, 1]), float(p[a, 2]),
                float(p[b, 0]), float(p[b, 1]), float(p[b, 2]),
                float(p[c, 0]), float(p[c, 1]), float(p[c, 2]),
                float(p[d, 0]), float(p[d, 1]), float(p[d, 2]),
                px, py, pz)
        if self.use_subdet and not self.is_deleted(t):
            s = self.subdet
            det = cached_insphere_sign(
                float(s[4 * t]), float(s[4 * t + 1]), float(s[4 * t + 2]),
                -float(s[4 * t + 3]),
                *args, self.isp_static, self.cached_static)
            if det != 0:
                return det < 0
        return insphere_sign_perturbed(
            *args, a, b, c, d, pid, self.isp_static) < 0

    # -- walk ---------------------------------------------------------------

    def walk(self, start, px, py, pz, serial):
        t = int(start)
        v = self.tet_v
        n = self.tet_n
        p = self.pts
        if v[4 * t + 3] == GHOST:
            if not self.owner_ok(t):
                return -1, AB_WALK
            t = int(n[4 * t + 3]) >> 2
        entry = -1
        steps = 0
        cap = 16 * self.capacity + 64
        while True:
            steps += 1
            if steps > cap:
                return -1, WALK_STUCK
            if not self.owner_ok(t):
                self.stats[S_WALK_STEPS] += steps
                return -1, AB_WALK
            if v[4 * t + 3] == GHOST:
                break
            h = splitmix64((t << 2) ^ serial)
            moved = False
            for j in range(4):
                i = (j + h) & 3
                if i == entry:
                    continue
                la, lb, lc = FACET[i]
                fa = int(v[4 * t + la]); fb = int(v[4 * t + lb]); fc = int(v[4 * t + lc])
                o = orient3d_sign(
                    p[fa, 0], p[fa, 1], p[fa, 2], p[fb, 0], p[fb, 1], p[fb, 2],
                    p[fc, 0], p[fc, 1], p[fc, 2], px, py, pz, self.o3d_static)
                if o > 0:
                    if self.refine_mode and self.constrained[4 * t + i]:
                        self.stats[S_WALK_STEPS] += steps
                        return -1, AB_CONSTR
                    ref = int(n[4 * t + i])
                    t = ref >> 2
                    entry = ref & 3
                    moved = True
                    break
            if not moved:
                break
        self.stats[S_WALK_STEPS] += steps
        return t, OK

    # -- cavity -------------------------------------------------------------

    def build_cavity(self, t0, px, py, pz, pid):
        """Breadth-first conflict region; fills deleted list + boundary
        facets. On any abort every marked tetrahedron is unmarked."""
        q = self.q
        v = self.tet_v
        n = self.tet_n
        self.n_del = 0
        self.n_bf = 0
        seed = t0
        if v[4 * t0 + 3] == GHOST and not self.tet_conflict(t0, px, py, pz, pid):
            seed = self.ghost_seed(t0, px, py, pz, pid)
            if seed == -2:
                return AB_CAVITY
            if seed == -3:
                return WS_OVERFLOW
            if seed < 0:
                return WALK_STUCK
        qn = 0
        q[qn] = seed; qn += 1
        self.mark_deleted(seed)
        self.deleted[self.n_del] = seed; self.n_del += 1
        head = 0
        while head < qn:
            t = int(q[head]); head += 1
            for i in range(4):
                ref = int(n[4 * t + i])
                if self.refine_mode and self.constrained[4 * t + i]:
                    st = self.push_bf(t, i, ref)
                    if st != OK:
                        self.rollback()
                        return st
                    continue
                u = ref >> 2
                if self.is_deleted(u):
                    continue
                if not self.owner_ok(u):
                    self.rollback()
                    return AB_CAVITY
                if self.tet_conflict(u, px, py, pz, pid):
                    if qn >= len(q) or self.n_del >= len(self.deleted):
                        self.rollback()
                        return WS_OVERFLOW
                    self.mark_deleted(u)
                    self.deleted[self.n_del] = u; self.n_del += 1
                    q[qn] = u; qn += 1
                else:
                    st = self.push_bf(t, i, ref)
                    if st != OK:
                        self.rollback()
                        return st
        return OK

    def push_bf(self, t, i, out_ref):
        j = self.n_bf
        if j >= len(self.bf_out):
            return WS_OVERFLOW
        la, lb, lc = FACET[i]
        self.bf_v[3 * j] = self.tet_v[4 * t + la]
        self.bf_v[3 * j + 1] = self.tet_v[4 * t + lb]
        self.bf_v[3 * j + 2] = self.tet_v[4 * t + lc]
        self.bf_out[j] = out_ref
        self.bf_in[j] = t
        self.n_bf = j + 1
        return OK

    def ghost_seed(self, g, px, py, pz, pid):
        """Hull search for a conflicting ghost when the walk's ghost is not.

        Only reachable when the point lies exactly on the supporting plane
        of a hull facet whose circumdisk excludes it. Returns the seed, or
        -1 (corrupt input) / -2 (ownership abort) / -3 (overflow).
        """
        visited = [g]
        stackpos = 0
        while stackpos < len(visited):
            t = visited[stackpos]; stackpos += 1
            if not self.owner_ok(t):
                return -2
            if self.tet_conflict(t, px, py, pz, pid):
                return t
            for i in range(4):
                u = int(self.tet_n[4 * t + i]) >> 2
                if self.tet_v[4 * u + 3] == GHOST and u not in visited:
                    if len(visited) >= len(self.q):
                        return -3
                    visited.append(u)
        return -1

    def rollback(self):
        for j in range(self.n_del):
            self.unmark_deleted(int(self.deleted[j]))

    # -- refine-only cavity postprocessing ----------------------------------

    def shrink_to_star(self, enclosing, px, py, pz):
        """Drop cavity tets whose boundary facet does not face the point.

        Also prunes cavities that wrapped around a constrained facet (both
        sides deleted), which would bury the constraint inside the cavity.
        """
        p = self.pts
        while True:
            bad = -1
            for j in range(self.n_bf):
                if self.is_deleted(int(self.bf_out[j]) >> 2):
                    bad = j
                    break
                fa = int(self.bf_v[3 * j]); fb = int(self.bf_v[3 * j + 1])
                fc = int(self.bf_v[3 * j + 2])
                if fa == GHOST or fb == GHOST or fc == GHOST:
                    continue
                o = orient3d_sign(
                    p[fa, 0], p[fa, 1], p[fa, 2], p[fb, 0], p[fb, 1], p[fb, 2],
                    p[fc, 0], p[fc, 1], p[fc, 2], px, py, pz, self.o3d_static)
                if o >= 0:
                    bad = j
                    break
            if bad < 0:
                return OK
            drop = int(self.bf_in[bad])
            if drop == enclosing:
                self.rollback()
                return AB_STAR
            self.unmark_deleted(drop)
            st = self.rebuild_cavity(enclosing)
            if st != OK:
                self.rollback()
                return st

    def rebuild_cavity(self, enclosing):
        """Recompute deleted list + boundary from still-marked tets."""
        q = self.q
        n = self.tet_n
        marked = {int(self.deleted[j]) for j in range(self.n_del)
                  if self.is_deleted(int(self.deleted[j]))}
        live = []
        seen = {enclosing}
        q[0] = enclosing
        qn = 1
        head = 0
        while head < qn:
            t = int(q[head]); head += 1
            live.append(t)
            for i in range(4):
                if self.refine_mode and self.constrained[4 * t + i]:
                    continue
                u = int(n[4 * t + i]) >> 2
                if u in marked and u not in seen:
                    seen.add(u)
                    q[qn] = u; qn += 1
        for t in marked - seen:
            self.unmark_deleted(t)
        self.n_del = 0
        for t in live:
            self.deleted[self.n_del] = t; self.n_del += 1
        self.n_bf = 0
        for t in live:
            for i in range(4):
                ref = int(n[4 * t + i])
                u = ref >> 2
                if ((self.refine_mode and self.constrained[4 * t + i])
                        or not self.is_deleted(u)):
                    st = self.push_bf(t, i, ref)
                    if st != OK:
                        return st
        return OK

    def too_close(self, px, py, pz, hp):
        limit = (self.prox_factor * hp) ** 2
        seen = set()
        for j in range(3 * self.n_bf):
            v = int(self.bf_v[j])
            if v == GHOST or v in seen:
                continue
            seen.add(v)
            dx = float(self.pts[v, 0]) - px
            dy = float(self.pts[v, 1]) - py
            dz = float(self.pts[v, 2]) - pz
            if dx * dx + dy * dy + dz * dz < limit:
                return True
        return False

    # -- retriangulation -----------------------------------------------------

    def reserve(self, need):
        """Ensure slots for ``need`` new tets; may request storage growth."""
        pool_free = len(self.pool) - int(self.reg[R_POOL_N])
        if self.n_del - need > pool_free:
            return WS_OVERFLOW  # leftover slots would not fit the pool
        have = int(self.reg[R_POOL_N]) + self.n_del
        if have >= need:
            return OK
        ask = max(self.chunk, need - have)
        # one indivisible fetch-and-add on the shared tetra counter; the
        # compiled twin uses a hardware atomic, here a lock guards the pair
        if self.resv_lock is not None:
            with self.resv_lock:
                start = int(self.counters[0])
                self.counters[0] = start + ask
        else:
            start = int(self.counters[0])
            self.counters[0] = start + ask
        if start + ask > self.capacity:
            self.reg[R_PEND_START] = start
            self.reg[R_PEND_COUNT] = ask
            return NEED_GROW
        return self.adopt_range(start, ask)

    def adopt_range(self, start, count):
        pn = int(self.reg[R_POOL_N])
        if pn + count > len(self.pool):
            self.reg[R_PEND_START] = start
            self.reg[R_PEND_COUNT] = count
            return NEED_GROW
        for k in range(count):
            t = start + k
            self.mark_deleted(t)
            self.pool[pn + k] = t
        self.reg[R_POOL_N] = pn + count
        return OK

    def retriangulate(self, p_id):
        nbf = self.n_bf
        v = self.tet_v
        n = self.tet_n
        lookup = self.lookup
        serial = int(self.reg[R_SERIAL])
        # local ids over the boundary vertices (ghost uses pseudo-id 33)
        overflow = False
        nlocal = 0
        for j in range(3 * nbf):
            w = int(self.bf_v[j])
            if w == GHOST:
                continue
            if self.use_subdet:
                if int(self.vscratch[w]) >> 6 != serial:
                    if nlocal >= 32:
                        overflow = True
                        break
                    self.vscratch[w] = (serial << 6) | nlocal
                    self.lverts[nlocal] = w
                    nlocal += 1
            else:
                found = -1
                for k in range(nlocal):
                    if int(self.lverts[k]) == w:
                        found = k
                        break
                if found < 0:
                    if nlocal >= 32:
                        overflow = True
                        break
                    self.lverts[nlocal] = w
                    nlocal += 1
        edges = {} if overflow else None

        # slots: reuse this cavity's own, then the pool (leftovers prechecked)
        created = []
        pn = int(self.reg[R_POOL_N])
        for j in range(nbf):
            if j < self.n_del:
                t = int(self.deleted[j])
            else:
                pn -= 1
                t = int(self.pool[pn])
            created.append(t)
        for j in range(nbf, self.n_del):
            self.pool[pn] = int(self.deleted[j])
            pn += 1
        self.reg[R_POOL_N] = pn

        last_real = -1
        for j in range(nbf):
            t = created[j]
            f0 = int(self.bf_v[3 * j]); f1 = int(self.bf_v[3 * j + 1])
            f2 = int(self.bf_v[3 * j + 2])
            # even rotation keeps orientation and parks the ghost in slot 3
            if f0 == GHOST:
                f0, f1, f2 = f1, f2, f0
            elif f1 == GHOST:
                f0, f1, f2 = f2, f0, f1
            v[4 * t] = p_id
            v[4 * t + 1] = f0
            v[4 * t + 2] = f1
            v[4 * t + 3] = f2
            out_ref = int(self.bf_out[j])
            n[4 * t] = out_ref
            n[out_ref] = 4 * t
            if self.refine_mode:
                self.constrained[4 * t] = self.constrained[out_ref]
                self.constrained[4 * t + 1] = 0
                self.constrained[4 * t + 2] = 0
                self.constrained[4 * t + 3] = 0
            if f2 != GHOST:
                last_real = t
                self.store_subdet(t)
            elif self.use_subdet:
                self.store_subdet(t)
            if not self.use_subdet:
                self.color[t] = 0
            # internal adjacency: the facet opposite local slot k shares the
            # directed boundary edge whose transpose its twin writes
            if overflow:
                trip = (f0, f1, f2)
                for slot, (ra, rb) in ((1, (trip[1], trip[2])),
                                       (2, (trip[2], trip[0])),
                                       (3, (trip[0], trip[1]))):
                    if (rb, ra) in edges:
                        twin = edges.pop((rb, ra))
                        n[4 * t + slot] = twin
                        n[twin] = 4 * t + slot
                    else:
                        edges[(ra, rb)] = 4 * t + slot
            else:
                ids = []
                for w in (f0, f1, f2):
                    if w == GHOST:
                        ids.append(33)
                    elif self.use_subdet:
                        ids.append(int(self.vscratch[w]) & 63)
                    else:
                        for k in range(nlocal):
                            if int(self.lverts[k]) == w:
                                ids.append(k)
                                break
                i1, i2, i3 = ids
                for slot, ra, rb in ((1, i2, i3), (2, i3, i1), (3, i1, i2)):
                    key_t = rb * 34 + ra
                    twin = int(lookup[key_t])
                    if twin != -1:
                        n[4 * t + slot] = twin
                        n[twin] = 4 * t + slot
                        lookup[key_t] = -1
                    else:
                        lookup[ra * 34 + rb] = 4 * t + slot
        self.vtx_tet[p_id] = created[0] if last_real < 0 else last_real
        self.stats[S_DELETED] += self.n_del
        self.stats[S_CREATED] += nbf
        return OK, last_real

    # -- one point -----------------------------------------------------------

    def insert_one(self, pid):
        px, py, pz = self.point(pid)
        serial = int(self.reg[R_SERIAL])
        self.reg[R_SERIAL] = serial + 1  # fresh vscratch stamp even on aborts
        t0, st = self.walk(int(self.reg[R_LAST]), px, py, pz, serial)
        if st != OK:
            return st
        # exact duplicate: the enclosing tet carries the twin vertex
        for k in range(4):
            w = int(self.tet_v[4 * t0 + k])
            if w == GHOST or w == pid:
                continue
            if (self.pts[w, 0] == px and self.pts[w, 1] == py
                    and self.pts[w, 2] == pz):
                return DUP_SKIP
        st = self.build_cavity(t0, px, py, pz, pid)
        if st != OK:
            return st
        if self.refine_mode:
            st = self.shrink_to_star(int(self.deleted[0]), px, py, pz)
            if st != OK:
                return st
            if self.prox_factor > 0.0 and self.too_close(
                    px, py, pz, float(self.point_h[pid])):
                self.rollback()
                return AB_PROX
        st = self.reserve(self.n_bf)
        if st != OK:
            self.rollback()
            return st
        st, last_real = self.retriangulate(pid)
        if st != OK:
            self.rollback()
            return st
        self.reg[R_LAST] = int(self.vtx_tet[pid])
        if last_real >= 0:
            self.reg[R_LAST_REAL] = last_real
        return INSERTED


def insert_batch(ctx, order, failed, dropped):
    """Insert ``order[reg[R_CURSOR]:]`` point ids one by one.

    Returns OK when the cursor reaches the end; NEED_GROW / WS_OVERFLOW
    when the orchestrator must grow storage and re-enter; WALK_STUCK on a
    corrupt mesh. Retryable ownership aborts go to ``failed``, duplicates
    to ``dropped``; permanent refine aborts are only counted.
    """
    eng = Engine(ctx)
    reg = eng.reg
    stats = eng.stats
    if reg[R_PEND_COUNT] > 0:
        st = eng.adopt_range(int(reg[R_PEND_START]), int(reg[R_PEND_COUNT]))
        if st != OK:
            return st
        reg[R_PEND_COUNT] = 0
    i = int(reg[R_CURSOR])
    end = len(order)
    while i < end:
        pid = int(order[i])
        out = eng.insert_one(pid)
        if out in (NEED_GROW, WS_OVERFLOW, WALK_STUCK):
            reg[R_CURSOR] = i
            return out
        if out == INSERTED:
            stats[S_INSERTED] += 1
        elif out == DUP_SKIP:
            dropped[reg[R_N_DUP]] = pid
            reg[R_N_DUP] += 1
            stats[S_DUP] += 1
        elif out == AB_WALK or out == AB_CAVITY:
            failed[reg[R_N_FAIL]] = pid
            reg[R_N_FAIL] += 1
            stats[S_AB_WALK if out == AB_WALK else S_AB_CAV] += 1
        elif out == AB_CONSTR:
            stats[S_AB_CONSTR] += 1
        elif out == AB_PROX:
            stats[S_AB_PROX] += 1
        else:
            stats[S_AB_STAR] += 1
        i += 1
    reg[R_CURSOR] = i
    return OK


# single-step entry points (diagnostics and the fine-grained public ops)

def walk_one(ctx, start, px, py, pz):
    eng = Engine(ctx)
    eng.reg[R_SERIAL] += 1
    return eng.walk(int(start), float(px), float(py), float(pz),
                    int(eng.reg[R_SERIAL]))


def cavity_one(ctx, t0, pid):
    """Build the conflict cavity of point ``pid`` seeded at ``t0``.

    Fills the workspace arrays; the marked tetrahedra stay deleted so a
    subsequent ``retri_one`` can apply the ball. Returns
    (status, n_deleted, n_boundary_facets).
    """
    eng = Engine(ctx)
    px, py, pz = eng.point(int(pid))
    st = eng.build_cavity(int(t0), px, py, pz, int(pid))
    eng.reg[R_SERIAL] += 1
    return st, eng.n_del, eng.n_bf


def retri_one(ctx, pid, n_del, n_bf):
    """Retriangulate a cavity prepared by ``cavity_one``."""
    eng = Engine(ctx)
    reg = eng.reg
    if reg[R_PEND_COUNT] > 0:
        st = eng.adopt_range(int(reg[R_PEND_START]), int(reg[R_PEND_COUNT]))
        if st != OK:
            return st, -1
        reg[R_PEND_COUNT] = 0
    eng.n_del = int(n_del)
    eng.n_bf = int(n_bf)
    reg[R_SERIAL] += 1
    st = eng.reserve(eng.n_bf)
    if st != OK:
        eng.rollback()
        return st, -1
    st, last_real = eng.retriangulate(int(pid))
    if st == OK:
        reg[R_LAST] = int(eng.vtx_tet[int(pid)])
        eng.stats[S_INSERTED] += 1
    return st, last_real
