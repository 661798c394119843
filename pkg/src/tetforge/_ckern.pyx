# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend.

Mirrors tetforge._pykern: same context-dict API, same sign conventions,
same statuses. Hot loops run without the GIL so worker threads insert
points concurrently; the shared tetra counter is advanced with a hardware
fetch-and-add. The exact stage of the predicates uses multi-term
floating-point expansions, verified against big-rational references in the
test suite.
"""

import numpy as np

cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.string cimport memset

from . import _tables

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    static inline int64_t tf_fetch_add_i64(int64_t *p, int64_t v) {
        return __atomic_fetch_add(p, v, __ATOMIC_SEQ_CST);
    }
    """
    long long tf_fetch_add_i64(long long* p, long long v) nogil

GHOST = 0xFFFFFFFF
NONE64 = 0xFFFFFFFFFFFFFFFF
DELETED_COLOR = 0xFFFF

cdef unsigned int C_GHOST = 0xFFFFFFFFu
cdef unsigned short C_DELCOL = 0xFFFFu

FACET = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))
cdef int FAC[4][3]
FAC[0][0], FAC[0][1], FAC[0][2] = 1, 2, 3
FAC[1][0], FAC[1][1], FAC[1][2] = 0, 3, 2
FAC[2][0], FAC[2][1], FAC[2][2] = 0, 1, 3
FAC[3][0], FAC[3][1], FAC[3][2] = 0, 2, 1

cdef double U_HALF = 2.0 ** -53
cdef double O3D_DYN = 32.0 * U_HALF
cdef double ISP_DYN = 128.0 * U_HALF
cdef double CACHED_DYN = 16.0 * U_HALF

OK = 0
NEED_GROW = 1
WS_OVERFLOW = 2
WALK_STUCK = 3
INSERTED = 10
DUP_SKIP = 11
AB_WALK = 12
AB_CAVITY = 13
AB_CONSTR = 14
AB_PROX = 15
AB_STAR = 16

cdef enum:
    C_OK = 0
    C_NEED_GROW = 1
    C_WS_OVERFLOW = 2
    C_WALK_STUCK = 3
    C_INSERTED_ = 10
    C_DUP = 11
    C_AB_WALK = 12
    C_AB_CAVITY = 13
    C_AB_CONSTR = 14
    C_AB_PROX = 15
    C_AB_STAR = 16

cdef enum:
    R_POOL_N = 0
    R_LAST = 1
    R_CURSOR = 2
    R_SERIAL = 3
    R_PEND_START = 4
    R_PEND_COUNT = 5
    R_N_FAIL = 6
    R_N_DUP = 7
    R_LAST_REAL = 8

cdef enum:
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

# curve tables copied into C storage at import
cdef unsigned char T_WM[8]
cdef unsigned char T_CM[8]
cdef unsigned char T_WH[384]
cdef unsigned char T_CH[384]

def _load_tables():
    cdef int i
    wm = _tables.W_MOORE; cm = _tables.C_MOORE
    wh = _tables.W_HILBERT; ch = _tables.C_HILBERT
    for i in range(8):
        T_WM[i] = wm[i]
        T_CM[i] = cm[i]
    for i in range(384):
        T_WH[i] = wh[i]
        T_CH[i] = ch[i]

_load_tables()


cdef inline unsigned long long _splitmix64(unsigned long long x) nogil:
    cdef unsigned long long z = x + 0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def splitmix64(x):
    return int(_splitmix64(<unsigned long long> (int(x) & 0xFFFFFFFFFFFFFFFF)))


# ===========================================================================
# expansion arithmetic (exact stage)
# ===========================================================================

cdef double SPLITTER = 134217729.0  # 2^27 + 1

cdef inline void _two_sum(double a, double b, double* x, double* y) nogil:
    cdef double s = a + b
    cdef double bv = s - a
    cdef double av = s - bv
    x[0] = s
    y[0] = (a - av) + (b - bv)

cdef inline void _two_diff(double a, double b, double* x, double* y) nogil:
    cdef double s = a - b
    cdef double bv = a - s
    cdef double av = s + bv
    x[0] = s
    y[0] = (a - av) + (bv - b)

cdef inline void _two_product(double a, double b, double* x, double* y) nogil:
    cdef double p = a * b
    cdef double ah, al, bh, bl, e1, e2, e3
    cdef double c = SPLITTER * a
    ah = c - (c - a); al = a - ah
    c = SPLITTER * b
    bh = c - (c - b); bl = b - bh
    e1 = p - ah * bh
    e2 = e1 - al * bh
    e3 = e2 - ah * bl
    x[0] = p
    y[0] = al * bl - e3


cdef int _exp_sum(int elen, double* e, int flen, double* f, double* h) nogil:
    """h = e + f with zero elimination; h may not alias inputs."""
    cdef double q, qnew, hh, enow, fnow
    cdef int eidx = 0, fidx = 0, hidx = 0
    if elen == 0:
        for eidx in range(flen):
            h[eidx] = f[eidx]
        return flen
    if flen == 0:
        for fidx in range(elen):
            h[fidx] = e[fidx]
        return elen
    enow = e[0]; fnow = f[0]
    if (fnow > enow) == (fnow > -enow):
        q = enow
        eidx += 1
        enow = e[eidx] if eidx < elen else 0.0
    else:
        q = fnow
        fidx += 1
        fnow = f[fidx] if fidx < flen else 0.0
    if eidx < elen and (fidx >= flen or
                        ((fnow > enow) == (fnow > -enow))):
        _two_sum(enow, q, &qnew, &hh)
        eidx += 1
        enow = e[eidx] if eidx < elen else 0.0
        q = qnew
        if hh != 0.0:
            h[hidx] = hh; hidx += 1
    elif fidx < flen:
        _two_sum(fnow, q, &qnew, &hh)
        fidx += 1
        fnow = f[fidx] if fidx < flen else 0.0
        q = qnew
        if hh != 0.0:
            h[hidx] = hh; hidx += 1
    while eidx < elen and fidx < flen:
        if (fnow > enow) == (fnow > -enow):
            _two_sum(q, enow, &qnew, &hh)
            eidx += 1
            enow = e[eidx] if eidx < elen else 0.0
        else:
            _two_sum(q, fnow, &qnew, &hh)
            fidx += 1
            fnow = f[fidx] if fidx < flen else 0.0
        q = qnew
        if hh != 0.0:
            h[hidx] = hh; hidx += 1
    while eidx < elen:
        _two_sum(q, enow, &qnew, &hh)
        eidx += 1
        enow = e[eidx] if eidx < elen else 0.0
        q = qnew
        if hh != 0.0:
            h[hidx] = hh; hidx += 1
    while fidx < flen:
        _two_sum(q, fnow, &qnew, &hh)
        fidx += 1
        fnow = f[fidx] if fidx < flen else 0.0
        q = qnew
        if hh != 0.0:
            h[hidx] = hh; hidx += 1
    if q != 0.0 or hidx == 0:
        h[hidx] = q; hidx += 1
    return hidx


cdef int _exp_scale(int elen, double* e, double b, double* h) nogil:
    """h = e * b with zero elimination; h may not alias e."""
    cdef double q, sum_, hh, prod1, prod0, enow
    cdef int eidx, hidx = 0
    if elen == 0 or b == 0.0:
        h[0] = 0.0
        return 0
    _two_product(e[0], b, &q, &hh)
    if hh != 0.0:
        h[hidx] = hh; hidx += 1
    for eidx in range(1, elen):
        enow = e[eidx]
        _two_product(enow, b, &prod1, &prod0)
        _two_sum(q, prod0, &sum_, &hh)
        if hh != 0.0:
            h[hidx] = hh; hidx += 1
        _two_sum(prod1, sum_, &q, &hh)
        if hh != 0.0:
            h[hidx] = hh; hidx += 1
    if q != 0.0 or hidx == 0:
        h[hidx] = q; hidx += 1
    return hidx


cdef int _exp_mul(int elen, double* e, int flen, double* f,
                  double* h, double* tmp1, double* tmp2) nogil:
    """h = e * f; tmp1 sized 2*elen*flen, tmp2 sized 2*max(elen,flen);
    h sized 2*elen*flen. Iterates over the shorter factor."""
    cdef int hlen = 0, slen, i
    cdef double* acc = h
    cdef double* nxt = tmp1
    cdef double* swp
    cdef double* lng
    cdef double* sht
    cdef int nlong, nshort
    if elen == 0 or flen == 0:
        h[0] = 0.0
        return 0
    if elen >= flen:
        lng = e; nlong = elen; sht = f; nshort = flen
    else:
        lng = f; nlong = flen; sht = e; nshort = elen
    for i in range(nshort):
        slen = _exp_scale(nlong, lng, sht[i], tmp2)
        hlen = _exp_sum(hlen, acc, slen, tmp2, nxt)
        swp = acc; acc = nxt; nxt = swp
    if acc != h:
        for i in range(hlen):
            h[i] = acc[i]
    return hlen


cdef inline int _exp_sign(int hlen, double* h) nogil:
    if hlen == 0:
        return 0
    cdef double top = h[hlen - 1]
    if top > 0.0:
        return 1
    if top < 0.0:
        return -1
    return 0


cdef int _det3_exact(double b1x, double b0x, double b1y, double b0y,
                     double b1z, double b0z,
                     double c1x, double c0x, double c1y, double c0y,
                     double c1z, double c0z,
                     double d1x, double d0x, double d1y, double d0y,
                     double d1z, double d0z, double* out, double* work) nogil:
    """Exact det of rows (b, c, d) given as 2-part expansions per entry.

    out must hold 576 doubles, work 1600; returns the component count.
    """
    cdef double cv[2]
    cdef double dv[2]
    cdef double bv[2]
    cdef double m[16]
    cdef double mneg[16]
    cdef double p1[8]
    cdef double p2[8]
    cdef double term[64]
    cdef double* t1 = work          # 128
    cdef double* t2 = work + 128    # 128
    cdef double* accA = work + 256  # 192
    cdef double* accB = work + 448  # 192 (work usage <= 640)
    cdef int lm, l1, l2, lt, lacc, i
    cdef int axis
    cdef double c1a, c0a, c1b, c0b, d1a, d0a, d1b, d0b, s1, s0
    cdef int lout = 0

    lacc = 0
    for axis in range(3):
        # minor over the two columns other than `axis`, rows c, d
        if axis == 0:
            c1a = c1y; c0a = c0y; c1b = c1z; c0b = c0z
            d1a = d1y; d0a = d0y; d1b = d1z; d0b = d0z
            s1 = b1x; s0 = b0x
        elif axis == 1:
            c1a = c1x; c0a = c0x; c1b = c1z; c0b = c0z
            d1a = d1x; d0a = d0x; d1b = d1z; d0b = d0z
            s1 = b1y; s0 = b0y
        else:
            c1a = c1x; c0a = c0x; c1b = c1y; c0b = c0y
            d1a = d1x; d0a = d0x; d1b = d1y; d0b = d0y
            s1 = b1z; s0 = b0z
        cv[0] = c0a; cv[1] = c1a
        dv[0] = d0b; dv[1] = d1b
        l1 = _exp_mul(2, cv, 2, dv, p1, t1, t2)
        cv[0] = c0b; cv[1] = c1b
        dv[0] = d0a; dv[1] = d1a
        l2 = _exp_mul(2, cv, 2, dv, p2, t1, t2)
        for i in range(l2):
            p2[i] = -p2[i]
        lm = _exp_sum(l1, p1, l2, p2, m)
        bv[0] = s0; bv[1] = s1
        lt = _exp_mul(2, bv, lm, m, term, t1, t2)
        if axis == 1:
            for i in range(lt):
                term[i] = -term[i]
        if axis == 0:
            for i in range(lt):
                accA[i] = term[i]
            lacc = lt
        elif axis == 1:
            lacc = _exp_sum(lacc, accA, lt, term, accB)
        else:
            lout = _exp_sum(lacc, accB, lt, term, out)
    return lout


cdef int _orient3d_exact(double ax, double ay, double az,
                         double bx, double by, double bz,
                         double cx, double cy, double cz,
                         double dx, double dy, double dz) nogil:
    cdef double b1x, b0x, b1y, b0y, b1z, b0z
    cdef double c1x, c0x, c1y, c0y, c1z, c0z
    cdef double d1x, d0x, d1y, d0y, d1z, d0z
    cdef double out[576]
    cdef double work[640]
    _two_diff(bx, ax, &b1x, &b0x); _two_diff(by, ay, &b1y, &b0y)
    _two_diff(bz, az, &b1z, &b0z)
    _two_diff(cx, ax, &c1x, &c0x); _two_diff(cy, ay, &c1y, &c0y)
    _two_diff(cz, az, &c1z, &c0z)
    _two_diff(dx, ax, &d1x, &d0x); _two_diff(dy, ay, &d1y, &d0y)
    _two_diff(dz, az, &d1z, &d0z)
    cdef int n = _det3_exact(b1x, b0x, b1y, b0y, b1z, b0z,
                             c1x, c0x, c1y, c0y, c1z, c0z,
                             d1x, d0x, d1y, d0y, d1z, d0z, out, work)
    return _exp_sign(n, out)


cdef int _lift_exact(double e1x, double e0x, double e1y, double e0y,
                     double e1z, double e0z, double* out, double* work) nogil:
    """Squared norm of a 2-part vector; out holds >= 24, work >= 64."""
    cdef double v[2]
    cdef double sq[8]
    cdef double acc[16]
    cdef double* t1 = work
    cdef double* t2 = work + 16
    cdef int l, lacc
    v[0] = e0x; v[1] = e1x
    lacc = _exp_mul(2, v, 2, v, acc, t1, t2)
    v[0] = e0y; v[1] = e1y
    l = _exp_mul(2, v, 2, v, sq, t1, t2)
    cdef double acc2[24]
    lacc = _exp_sum(lacc, acc, l, sq, acc2)
    v[0] = e0z; v[1] = e1z
    l = _exp_mul(2, v, 2, v, sq, t1, t2)
    return _exp_sum(lacc, acc2, l, sq, out)


cdef int _insphere_exact(double ax, double ay, double az,
                         double bx, double by, double bz,
                         double cx, double cy, double cz,
                         double dx, double dy, double dz,
                         double ex, double ey, double ez) nogil:
    """Exact sign of the translated 4x4 insphere determinant."""
    cdef double r1[4][2]  # x entries per row (hi, lo)
    cdef double r2[4][2]
    cdef double r3[4][2]
    cdef double lift[4][24]
    cdef int liftlen[4]
    cdef double m3[576]
    cdef double lwork[64]
    cdef double dwork[640]
    cdef int lm3, lterm, lacc, i, r, k
    cdef int rows[3]
    # big buffers for term accumulation
    cdef double* term = <double*> malloc(sizeof(double) * (27648 + 2 * 27648 + 2 * 55296))
    if term == NULL:
        with gil:
            raise MemoryError()
    cdef double* tmp1 = term + 27648
    cdef double* tmp2 = tmp1 + 27648  # scale scratch, <= 2*max(elen,flen)
    cdef double* acc = tmp2 + 27648
    cdef double* nxt = acc + 55296
    cdef double* swp
    _two_diff(bx, ax, &r1[0][1], &r1[0][0]); _two_diff(by, ay, &r2[0][1], &r2[0][0]); _two_diff(bz, az, &r3[0][1], &r3[0][0])
    _two_diff(cx, ax, &r1[1][1], &r1[1][0]); _two_diff(cy, ay, &r2[1][1], &r2[1][0]); _two_diff(cz, az, &r3[1][1], &r3[1][0])
    _two_diff(dx, ax, &r1[2][1], &r1[2][0]); _two_diff(dy, ay, &r2[2][1], &r2[2][0]); _two_diff(dz, az, &r3[2][1], &r3[2][0])
    _two_diff(ex, ax, &r1[3][1], &r1[3][0]); _two_diff(ey, ay, &r2[3][1], &r2[3][0]); _two_diff(ez, az, &r3[3][1], &r3[3][0])
    for r in range(4):
        liftlen[r] = _lift_exact(r1[r][1], r1[r][0], r2[r][1], r2[r][0],
                                 r3[r][1], r3[r][0], lift[r], lwork)
    lacc = 0
    for r in range(4):
        k = 0
        for i in range(4):
            if i != r:
                rows[k] = i
                k += 1
        lm3 = _det3_exact(
            r1[rows[0]][1], r1[rows[0]][0], r2[rows[0]][1], r2[rows[0]][0],
            r3[rows[0]][1], r3[rows[0]][0],
            r1[rows[1]][1], r1[rows[1]][0], r2[rows[1]][1], r2[rows[1]][0],
            r3[rows[1]][1], r3[rows[1]][0],
            r1[rows[2]][1], r1[rows[2]][0], r2[rows[2]][1], r2[rows[2]][0],
            r3[rows[2]][1], r3[rows[2]][0], m3, dwork)
        lterm = _exp_mul(liftlen[r], lift[r], lm3, m3, term, tmp1, tmp2)
        # cofactor signs of the lift column: -, +, -, +
        if r % 2 == 0:
            for i in range(lterm):
                term[i] = -term[i]
        if r == 0:
            for i in range(lterm):
                acc[i] = term[i]
            lacc = lterm
        else:
            lacc = _exp_sum(lacc, acc, lterm, term, nxt)
            swp = acc; acc = nxt; nxt = swp
    cdef int sgn = _exp_sign(lacc, acc)
    free(term)
    return sgn


cdef int _insphere_sos(double ax, double ay, double az,
                       double bx, double by, double bz,
                       double cx, double cy, double cz,
                       double dx, double dy, double dz,
                       double ex, double ey, double ez,
                       long long ia, long long ib, long long ic,
                       long long id_, long long ie) nogil:
    """Exact sign with symbolic lift perturbation; never returns 0."""
    cdef int det = _insphere_exact(ax, ay, az, bx, by, bz, cx, cy, cz,
                                   dx, dy, dz, ex, ey, ez)
    if det != 0:
        return det
    cdef double px[5]
    cdef double py[5]
    cdef double pz[5]
    cdef long long ids[5]
    cdef int order[5]
    cdef int i, j, best, o, row
    px[0] = ax; py[0] = ay; pz[0] = az
    px[1] = bx; py[1] = by; pz[1] = bz
    px[2] = cx; py[2] = cy; pz[2] = cz
    px[3] = dx; py[3] = dy; pz[3] = dz
    px[4] = ex; py[4] = ey; pz[4] = ez
    ids[0] = ia; ids[1] = ib; ids[2] = ic; ids[3] = id_; ids[4] = ie
    for i in range(5):
        order[i] = i
    for i in range(1, 5):  # insertion sort by ascending global id
        j = i
        while j > 0 and ids[order[j]] < ids[order[j - 1]]:
            best = order[j]; order[j] = order[j - 1]; order[j - 1] = best
            j -= 1
    cdef int rest[4]
    for i in range(5):
        row = order[i]
        j = 0
        for best in range(5):
            if best != row:
                rest[j] = best
                j += 1
        o = _orient3d_exact(px[rest[0]], py[rest[0]], pz[rest[0]],
                            px[rest[1]], py[rest[1]], pz[rest[1]],
                            px[rest[2]], py[rest[2]], pz[rest[2]],
                            px[rest[3]], py[rest[3]], pz[rest[3]])
        if o != 0:
            return -o if row % 2 == 0 else o
    return 0  # unreachable for valid input (positively oriented a,b,c,d)


# ===========================================================================
# filtered predicates
# ===========================================================================

cdef inline double _fabs(double x) nogil:
    return x if x >= 0.0 else -x


cdef int _orient3d(double ax, double ay, double az, double bx, double by,
                   double bz, double cx, double cy, double cz,
                   double dx, double dy, double dz,
                   double static_bound) nogil:
    cdef double bdx = bx - ax, bdy = by - ay, bdz = bz - az
    cdef double cdx = cx - ax, cdy = cy - ay, cdz = cz - az
    cdef double ddx = dx - ax, ddy = dy - ay, ddz = dz - az
    cdef double m0 = cdy * ddz - cdz * ddy
    cdef double m1 = cdx * ddz - cdz * ddx
    cdef double m2 = cdx * ddy - cdy * ddx
    cdef double det = bdx * m0 - bdy * m1 + bdz * m2
    if static_bound > 0.0 and (det > static_bound or det < -static_bound):
        return 1 if det > 0.0 else -1
    cdef double perm = (_fabs(bdx) * (_fabs(cdy * ddz) + _fabs(cdz * ddy))
                        + _fabs(bdy) * (_fabs(cdx * ddz) + _fabs(cdz * ddx))
                        + _fabs(bdz) * (_fabs(cdx * ddy) + _fabs(cdy * ddx)))
    cdef double err = O3D_DYN * perm
    if det > err or -det > err:
        return 1 if det > 0.0 else -1
    return _orient3d_exact(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz)


cdef void _subdets_perm(double ax, double ay, double az, double bx, double by,
                        double bz, double cx, double cy, double cz,
                        double dx, double dy, double dz,
                        double* s, double* p) nogil:
    cdef double bdx = bx - ax, bdy = by - ay, bdz = bz - az
    cdef double cdx = cx - ax, cdy = cy - ay, cdz = cz - az
    cdef double ddx = dx - ax, ddy = dy - ay, ddz = dz - az
    cdef double bl = bdx * bdx + bdy * bdy + bdz * bdz
    cdef double cl = cdx * cdx + cdy * cdy + cdz * cdz
    cdef double dl = ddx * ddx + ddy * ddy + ddz * ddz
    cdef double czdl = cdz * dl, dzcl = ddz * cl
    cdef double cydl = cdy * dl, dycl = ddy * cl
    cdef double cxdl = cdx * dl, dxcl = ddx * cl
    cdef double cydz = cdy * ddz, czdy = cdz * ddy
    cdef double cxdz = cdx * ddz, czdx = cdz * ddx
    cdef double cxdy = cdx * ddy, cydx = cdy * ddx
    s[0] = bdy * (czdl - dzcl) - bdz * (cydl - dycl) + bl * (cydz - czdy)
    s[1] = bdx * (czdl - dzcl) - bdz * (cxdl - dxcl) + bl * (cxdz - czdx)
    s[2] = bdx * (cydl - dycl) - bdy * (cxdl - dxcl) + bl * (cxdy - cydx)
    s[3] = bdx * (cydz - czdy) - bdy * (cxdz - czdx) + bdz * (cxdy - cydx)
    if p != NULL:
        p[0] = (_fabs(bdy) * (_fabs(czdl) + _fabs(dzcl))
                + _fabs(bdz) * (_fabs(cydl) + _fabs(dycl))
                + bl * (_fabs(cydz) + _fabs(czdy)))
        p[1] = (_fabs(bdx) * (_fabs(czdl) + _fabs(dzcl))
                + _fabs(bdz) * (_fabs(cxdl) + _fabs(dxcl))
                + bl * (_fabs(cxdz) + _fabs(czdx)))
        p[2] = (_fabs(bdx) * (_fabs(cydl) + _fabs(dycl))
                + _fabs(bdy) * (_fabs(cxdl) + _fabs(dxcl))
                + bl * (_fabs(cxdy) + _fabs(cydx)))
        p[3] = (_fabs(bdx) * (_fabs(cydz) + _fabs(czdy))
                + _fabs(bdy) * (_fabs(cxdz) + _fabs(czdx))
                + _fabs(bdz) * (_fabs(cxdy) + _fabs(cydx)))


cdef int _insphere(double ax, double ay, double az, double bx, double by,
                   double bz, double cx, double cy, double cz,
                   double dx, double dy, double dz,
                   double ex, double ey, double ez,
                   double static_bound) nogil:
    cdef double s[4]
    cdef double p[4]
    _subdets_perm(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz, s, p)
    cdef double edx = ex - ax, edy = ey - ay, edz = ez - az
    cdef double el = edx * edx + edy * edy + edz * edz
    cdef double det = -edx * s[0] + edy * s[1] - edz * s[2] + el * s[3]
    if static_bound > 0.0 and (det > static_bound or det < -static_bound):
        return 1 if det > 0.0 else -1
    cdef double perm = (_fabs(edx) * p[0] + _fabs(edy) * p[1]
                        + _fabs(edz) * p[2] + el * p[3])
    cdef double err = ISP_DYN * perm
    if det > err or -det > err:
        return 1 if det > 0.0 else -1
    return _insphere_exact(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                           ex, ey, ez)


cdef int _insphere_p(double ax, double ay, double az, double bx, double by,
                     double bz, double cx, double cy, double cz,
                     double dx, double dy, double dz,
                     double ex, double ey, double ez,
                     long long ia, long long ib, long long ic, long long id_,
                     long long ie, double static_bound) nogil:
    cdef double s[4]
    cdef double p[4]
    _subdets_perm(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz, s, p)
    cdef double edx = ex - ax, edy = ey - ay, edz = ez - az
    cdef double el = edx * edx + edy * edy + edz * edz
    cdef double det = -edx * s[0] + edy * s[1] - edz * s[2] + el * s[3]
    if static_bound > 0.0 and (det > static_bound or det < -static_bound):
        return 1 if det > 0.0 else -1
    cdef double perm = (_fabs(edx) * p[0] + _fabs(edy) * p[1]
                        + _fabs(edz) * p[2] + el * p[3])
    cdef double err = ISP_DYN * perm
    if det > err or -det > err:
        return 1 if det > 0.0 else -1
    return _insphere_sos(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                         ex, ey, ez, ia, ib, ic, id_, ie)


cdef int _cached_insphere(double s1, double s2, double s3, double s4,
                          double ax, double ay, double az, double bx,
                          double by, double bz, double cx, double cy,
                          double cz, double dx, double dy, double dz,
                          double ex, double ey, double ez,
                          double static_bound, double cached_bound) nogil:
    cdef double edx = ex - ax, edy = ey - ay, edz = ez - az
    cdef double el = edx * edx + edy * edy + edz * edz
    cdef double t1 = edx * s1, t2 = edy * s2, t3 = edz * s3, t4 = el * s4
    cdef double det = -t1 + t2 - t3 + t4
    cdef double err = cached_bound + CACHED_DYN * (
        _fabs(t1) + _fabs(t2) + _fabs(t3) + _fabs(t4))
    if det > err or -det > err:
        return 1 if det > 0.0 else -1
    return _insphere(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                     ex, ey, ez, static_bound)


# Python-callable predicate wrappers (same names as the pure twin)

def orient3d_sign(double ax, double ay, double az, double bx, double by,
                  double bz, double cx, double cy, double cz, double dx,
                  double dy, double dz, double static_bound=0.0):
    return _orient3d(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                     static_bound)


def insphere_sign(double ax, double ay, double az, double bx, double by,
                  double bz, double cx, double cy, double cz, double dx,
                  double dy, double dz, double ex, double ey, double ez,
                  double static_bound=0.0):
    return _insphere(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                     ex, ey, ez, static_bound)


def insphere_sign_perturbed(double ax, double ay, double az, double bx,
                            double by, double bz, double cx, double cy,
                            double cz, double dx, double dy, double dz,
                            double ex, double ey, double ez,
                            ia, ib, ic, id_, ie, double static_bound=0.0):
    return _insphere_p(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                       ex, ey, ez, <long long> ia, <long long> ib,
                       <long long> ic, <long long> id_, <long long> ie,
                       static_bound)


def cached_insphere_sign(double s1, double s2, double s3, double s4,
                         double ax, double ay, double az, double bx,
                         double by, double bz, double cx, double cy,
                         double cz, double dx, double dy, double dz,
                         double ex, double ey, double ez,
                         double static_bound, double cached_bound):
    return _cached_insphere(s1, s2, s3, s4, ax, ay, az, bx, by, bz,
                            cx, cy, cz, dx, dy, dz, ex, ey, ez,
                            static_bound, cached_bound)


def subdets(double ax, double ay, double az, double bx, double by, double bz,
            double cx, double cy, double cz, double dx, double dy, double dz):
    cdef double s[4]
    _subdets_perm(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz, s, NULL)
    return (s[0], s[1], s[2], s[3])


# ===========================================================================
# curve keys
# ===========================================================================

cdef unsigned long long _cell_key(long cx, long cy, long cz, int m) nogil:
    cdef int lvl = m - 1
    cdef int cell = (((cx >> lvl) & 1)
                     | (((cy >> lvl) & 1) << 1)
                     | (((cz >> lvl) & 1) << 2))
    cdef int w = T_WM[cell]
    cdef int state = T_CM[w]
    cdef unsigned long long d = <unsigned long long> w
    lvl = m - 2
    while lvl >= 0:
        cell = (((cx >> lvl) & 1)
                | (((cy >> lvl) & 1) << 1)
                | (((cz >> lvl) & 1) << 2))
        w = T_WH[state * 8 + cell]
        d = (d << 3) | <unsigned long long> w
        state = T_CH[state * 8 + w]
        lvl -= 1
    return d


def moore_keys(double[:, ::1] pts, unsigned int[::1] ids,
               unsigned long long[::1] out,
               lo, inv_ext, warp_t, warp_q, int m, shift):
    cdef double lo0 = lo[0], lo1 = lo[1], lo2 = lo[2]
    cdef double iv0 = inv_ext[0], iv1 = inv_ext[1], iv2 = inv_ext[2]
    cdef double t0 = warp_t[0], t1 = warp_t[1], t2 = warp_t[2]
    cdef double q0 = warp_q[0], q1 = warp_q[1], q2 = warp_q[2]
    cdef unsigned long long sh = <unsigned long long> (int(shift) & 0xFFFFFFFFFFFFFFFF)
    cdef unsigned long long mask = (1ULL << (3 * m)) - 1ULL
    cdef bint warped = (t0 != q0) or (t1 != q1) or (t2 != q2)
    cdef long scale = 1L << m
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t j, i
    cdef double u
    cdef long c0, c1, c2
    with nogil:
        for j in range(n):
            i = ids[j]
            u = (pts[i, 0] - lo0) * iv0
            if warped:
                u = u * (q0 / t0) if u < t0 else q0 + (u - t0) * ((1.0 - q0) / (1.0 - t0))
            c0 = <long> (u * scale)
            if c0 < 0: c0 = 0
            elif c0 >= scale: c0 = scale - 1
            u = (pts[i, 1] - lo1) * iv1
            if warped:
                u = u * (q1 / t1) if u < t1 else q1 + (u - t1) * ((1.0 - q1) / (1.0 - t1))
            c1 = <long> (u * scale)
            if c1 < 0: c1 = 0
            elif c1 >= scale: c1 = scale - 1
            u = (pts[i, 2] - lo2) * iv2
            if warped:
                u = u * (q2 / t2) if u < t2 else q2 + (u - t2) * ((1.0 - q2) / (1.0 - t2))
            c2 = <long> (u * scale)
            if c2 < 0: c2 = 0
            elif c2 >= scale: c2 = scale - 1
            out[j] = (_cell_key(c0, c1, c2, m) + sh) & mask


# ===========================================================================
# radix sort
# ===========================================================================

cdef void _radix_hist(unsigned long long* keys, Py_ssize_t lo, Py_ssize_t hi,
                      int shift, long long* counts) nogil:
    cdef Py_ssize_t i
    memset(counts, 0, 256 * sizeof(long long))
    for i in range(lo, hi):
        counts[(keys[i] >> shift) & 0xFF] += 1


cdef void _radix_scatter(unsigned long long* keys, unsigned long long* vals,
                         unsigned long long* k_out, unsigned long long* v_out,
                         Py_ssize_t lo, Py_ssize_t hi, int shift,
                         long long* offsets) nogil:
    cdef Py_ssize_t i
    cdef int d
    for i in range(lo, hi):
        d = <int> ((keys[i] >> shift) & 0xFF)
        k_out[offsets[d]] = keys[i]
        v_out[offsets[d]] = vals[i]
        offsets[d] += 1


def radix_sort_pairs(keys, vals, int key_bits, int workers=1):
    """Stable LSD radix sort; per-chunk histograms + prefix-sum scatter."""
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] k = np.array(keys, dtype=np.uint64, copy=True)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] v = np.array(vals, dtype=np.uint64, copy=True)
    cdef Py_ssize_t n = len(k)
    if n <= 1:
        return k, v
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] k2 = np.empty(n, dtype=np.uint64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] v2 = np.empty(n, dtype=np.uint64)
    if workers < 1:
        workers = 1
    cdef int nchunks = workers if n >= 65536 and workers > 1 else 1
    if nchunks == 1:
        _radix_serial(k, v, k2, v2, key_bits)
        return k, v
    return _radix_parallel(k, v, k2, v2, key_bits, nchunks)


cdef _radix_serial(cnp.ndarray[cnp.uint64_t, ndim=1] k,
                   cnp.ndarray[cnp.uint64_t, ndim=1] v,
                   cnp.ndarray[cnp.uint64_t, ndim=1] k2,
                   cnp.ndarray[cnp.uint64_t, ndim=1] v2, int key_bits):
    cdef Py_ssize_t n = len(k)
    cdef long long counts[256]
    cdef long long offsets[256]
    cdef int shift, d
    cdef long long total
    cdef unsigned long long* kp
    cdef unsigned long long* vp
    cdef unsigned long long* kq
    cdef unsigned long long* vq
    cdef bint flipped
    kp = <unsigned long long*> cnp.PyArray_DATA(k)
    vp = <unsigned long long*> cnp.PyArray_DATA(v)
    kq = <unsigned long long*> cnp.PyArray_DATA(k2)
    vq = <unsigned long long*> cnp.PyArray_DATA(v2)
    with nogil:
        shift = 0
        while shift < key_bits:
            _radix_hist(kp, 0, n, shift, counts)
            d = 0
            while d < 256 and counts[d] != n:
                d += 1
            if d == 256:  # no digit holds every key: scatter this pass
                total = 0
                for d in range(256):
                    offsets[d] = total
                    total += counts[d]
                _radix_scatter(kp, vp, kq, vq, 0, n, shift, offsets)
                flipped = kp == <unsigned long long*> cnp.PyArray_DATA(k)
                if flipped:
                    kp = kq; vp = vq
                    kq = <unsigned long long*> cnp.PyArray_DATA(k)
                    vq = <unsigned long long*> cnp.PyArray_DATA(v)
                else:
                    kp = <unsigned long long*> cnp.PyArray_DATA(k)
                    vp = <unsigned long long*> cnp.PyArray_DATA(v)
                    kq = <unsigned long long*> cnp.PyArray_DATA(k2)
                    vq = <unsigned long long*> cnp.PyArray_DATA(v2)
            shift += 8
    if kp != <unsigned long long*> cnp.PyArray_DATA(k):
        k[:] = k2
        v[:] = v2


def _hist_chunk(kobj, Py_ssize_t lo, Py_ssize_t hi, int shift, cobj):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] k = kobj
    cdef cnp.ndarray[cnp.int64_t, ndim=1] c = cobj
    cdef unsigned long long* kp = <unsigned long long*> cnp.PyArray_DATA(k)
    cdef long long* cp = <long long*> cnp.PyArray_DATA(c)
    with nogil:
        _radix_hist(kp, lo, hi, shift, cp)


def _scatter_chunk(kobj, vobj, k2obj, v2obj, Py_ssize_t lo, Py_ssize_t hi,
                   int shift, oobj):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] k = kobj
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] v = vobj
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] k2 = k2obj
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] v2 = v2obj
    cdef cnp.ndarray[cnp.int64_t, ndim=1] o = oobj
    cdef unsigned long long* kp = <unsigned long long*> cnp.PyArray_DATA(k)
    cdef unsigned long long* vp = <unsigned long long*> cnp.PyArray_DATA(v)
    cdef unsigned long long* kq = <unsigned long long*> cnp.PyArray_DATA(k2)
    cdef unsigned long long* vq = <unsigned long long*> cnp.PyArray_DATA(v2)
    cdef long long* op = <long long*> cnp.PyArray_DATA(o)
    with nogil:
        _radix_scatter(kp, vp, kq, vq, lo, hi, shift, op)


def _radix_parallel(k, v, k2, v2, int key_bits, int nchunks):
    import threading
    n = len(k)
    bounds = [n * i // nchunks for i in range(nchunks + 1)]
    src_k, src_v, dst_k, dst_v = k, v, k2, v2
    for shift in range(0, key_bits, 8):
        counts = np.zeros((nchunks, 256), dtype=np.int64)
        threads = [threading.Thread(target=_hist_chunk,
                                    args=(src_k, bounds[c], bounds[c + 1],
                                          shift, counts[c]))
                   for c in range(nchunks)]
        for t in threads: t.start()
        for t in threads: t.join()
        per_digit = counts.sum(axis=0)
        if int(per_digit.max()) == n:
            continue
        # exclusive offsets in (digit, chunk) order keep the sort stable
        flat = counts.T.reshape(-1)
        offsets = np.zeros_like(flat)
        np.cumsum(flat[:-1], out=offsets[1:])
        offs = offsets.reshape(256, nchunks).T.copy()
        threads = [threading.Thread(target=_scatter_chunk,
                                    args=(src_k, src_v, dst_k, dst_v,
                                          bounds[c], bounds[c + 1], shift,
                                          offs[c]))
                   for c in range(nchunks)]
        for t in threads: t.start()
        for t in threads: t.join()
        src_k, dst_k = dst_k, src_k
        src_v, dst_v = dst_v, src_v
    return src_k, src_v


# ===========================================================================
# insertion engine
# ===========================================================================

ctypedef struct Eng:
    double* pts
    long long* vscratch
    unsigned long long* vtx_tet
    unsigned int* tet_v
    unsigned long long* tet_n
    double* subdet
    unsigned short* color
    unsigned char* constrained
    long long* counters
    unsigned long long* q
    unsigned long long* deleted
    unsigned int* bf_v
    unsigned long long* bf_out
    unsigned long long* bf_in
    long long* lookup
    unsigned int* lverts
    unsigned long long* edge_key
    unsigned long long* edge_ref
    unsigned long long* pool
    long long* reg
    long long* stats
    bint use_subdet
    bint ownership
    bint refine_mode
    int* part_id
    int ghost_part
    int my_part
    double* point_h
    double prox_factor
    double o3d_static
    double isp_static
    double cached_static
    long long audit_every
    long long* audit_log
    long long audit_cap
    long long chunk
    long long capacity
    long long ws_cap
    long long bf_cap
    long long pool_cap
    long long n_del
    long long n_bf


cdef inline bint _is_deleted(Eng* g, long long t) nogil:
    if g.use_subdet:
        return g.subdet[4 * t + 3] > 0.0
    return g.color[t] == C_DELCOL


cdef inline void _mark_deleted(Eng* g, long long t) nogil:
    if g.use_subdet:
        g.subdet[4 * t + 3] = 1.0
    else:
        g.color[t] = C_DELCOL


cdef void _store_subdet(Eng* g, long long t) nogil:
    cdef double s[4]
    cdef long long a, b, c, d
    if not g.use_subdet:
        return
    if g.tet_v[4 * t + 3] == C_GHOST:
        g.subdet[4 * t] = 0.0
        g.subdet[4 * t + 1] = 0.0
        g.subdet[4 * t + 2] = 0.0
        g.subdet[4 * t + 3] = -1.0
        return
    a = g.tet_v[4 * t]; b = g.tet_v[4 * t + 1]
    c = g.tet_v[4 * t + 2]; d = g.tet_v[4 * t + 3]
    _subdets_perm(g.pts[3 * a], g.pts[3 * a + 1], g.pts[3 * a + 2],
                  g.pts[3 * b], g.pts[3 * b + 1], g.pts[3 * b + 2],
                  g.pts[3 * c], g.pts[3 * c + 1], g.pts[3 * c + 2],
                  g.pts[3 * d], g.pts[3 * d + 1], g.pts[3 * d + 2], s, NULL)
    g.subdet[4 * t] = s[0]
    g.subdet[4 * t + 1] = s[1]
    g.subdet[4 * t + 2] = s[2]
    g.subdet[4 * t + 3] = -s[3]


cdef inline void _unmark_deleted(Eng* g, long long t) nogil:
    if g.use_subdet:
        _store_subdet(g, t)
    else:
        g.color[t] = 0


cdef bint _owner_ok(Eng* g, long long t) nogil:
    cdef int mine = 0, k, pid
    cdef unsigned int v
    cdef long long nrec
    if not g.ownership:
        return True
    for k in range(4):
        v = g.tet_v[4 * t + k]
        pid = g.ghost_part if v == C_GHOST else g.part_id[v]
        if pid == g.my_part:
            mine += 1
    if g.audit_every > 0:
        g.audit_log[1] += 1
        nrec = g.audit_log[0]
        if g.audit_log[1] % g.audit_every == 0 and 3 + 2 * nrec + 1 < g.audit_cap:
            g.audit_log[3 + 2 * nrec] = t
            g.audit_log[3 + 2 * nrec + 1] = (g.my_part if mine >= 3
                                             else -1 - g.my_part)
            g.audit_log[0] = nrec + 1
    return mine >= 3


cdef bint _real_conflict(Eng* g, long long t, double px, double py, double pz,
                         long long pid) nogil:
    cdef long long a, b, c, d
    cdef int det
    g.stats[S_INSPHERE] += 1
    a = g.tet_v[4 * t]; b = g.tet_v[4 * t + 1]
    c = g.tet_v[4 * t + 2]; d = g.tet_v[4 * t + 3]
    cdef double ax = g.pts[3 * a], ay = g.pts[3 * a + 1], az = g.pts[3 * a + 2]
    cdef double bx = g.pts[3 * b], by = g.pts[3 * b + 1], bz = g.pts[3 * b + 2]
    cdef double cx = g.pts[3 * c], cy = g.pts[3 * c + 1], cz = g.pts[3 * c + 2]
    cdef double dx = g.pts[3 * d], dy = g.pts[3 * d + 1], dz = g.pts[3 * d + 2]
    if g.use_subdet and not _is_deleted(g, t):
        det = _cached_insphere(g.subdet[4 * t], g.subdet[4 * t + 1],
                               g.subdet[4 * t + 2], -g.subdet[4 * t + 3],
                               ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                               px, py, pz, g.isp_static, g.cached_static)
        if det != 0:
            return det < 0
    return _insphere_p(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz,
                       px, py, pz, a, b, c, d, pid, g.isp_static) < 0


cdef bint _tet_conflict(Eng* g, long long t, double px, double py, double pz,
                        long long pid) nogil:
    cdef long long a, b, c, u
    cdef int o
    if g.tet_v[4 * t + 3] == C_GHOST:
        a = g.tet_v[4 * t]; b = g.tet_v[4 * t + 1]; c = g.tet_v[4 * t + 2]
        o = _orient3d(g.pts[3 * a], g.pts[3 * a + 1], g.pts[3 * a + 2],
                      g.pts[3 * b], g.pts[3 * b + 1], g.pts[3 * b + 2],
                      g.pts[3 * c], g.pts[3 * c + 1], g.pts[3 * c + 2],
                      px, py, pz, g.o3d_static)
        if o != 0:
            return o > 0
        u = <long long> (g.tet_n[4 * t + 3] >> 2)
        return _real_conflict(g, u, px, py, pz, pid)
    return _real_conflict(g, t, px, py, pz, pid)


cdef long long _walk(Eng* g, long long start, double px, double py, double pz,
                     long long serial, int* status) nogil:
    cdef long long t = start, steps = 0, cap = 16 * g.capacity + 64
    cdef long long ref, fa, fb, fc
    cdef unsigned long long h
    cdef int i, j, entry = -1, o
    cdef bint moved
    if g.tet_v[4 * t + 3] == C_GHOST:
        if not _owner_ok(g, t):
            status[0] = C_AB_WALK
            return -1
        t = <long long> (g.tet_n[4 * t + 3] >> 2)
    while True:
        steps += 1
        if steps > cap:
            status[0] = C_WALK_STUCK
            return -1
        if not _owner_ok(g, t):
            g.stats[S_WALK_STEPS] += steps
            status[0] = C_AB_WALK
            return -1
        if g.tet_v[4 * t + 3] == C_GHOST:
            break
        h = _splitmix64((<unsigned long long> t << 2)
                        ^ <unsigned long long> serial)
        moved = False
        for j in range(4):
            i = <int> ((j + h) & 3)
            if i == entry:
                continue
            fa = g.tet_v[4 * t + FAC[i][0]]
            fb = g.tet_v[4 * t + FAC[i][1]]
            fc = g.tet_v[4 * t + FAC[i][2]]
            o = _orient3d(g.pts[3 * fa], g.pts[3 * fa + 1], g.pts[3 * fa + 2],
                          g.pts[3 * fb], g.pts[3 * fb + 1], g.pts[3 * fb + 2],
                          g.pts[3 * fc], g.pts[3 * fc + 1], g.pts[3 * fc + 2],
                          px, py, pz, g.o3d_static)
            if o > 0:
                if g.refine_mode and g.constrained[4 * t + i]:
                    g.stats[S_WALK_STEPS] += steps
                    status[0] = C_AB_CONSTR
                    return -1
                ref = <long long> g.tet_n[4 * t + i]
                t = ref >> 2
                entry = <int> (ref & 3)
                moved = True
                break
        if not moved:
            break
    g.stats[S_WALK_STEPS] += steps
    status[0] = C_OK
    return t


cdef int _push_bf(Eng* g, long long t, int i, unsigned long long out_ref) nogil:
    cdef long long j = g.n_bf
    if j >= g.bf_cap:
        return C_WS_OVERFLOW
    g.bf_v[3 * j] = g.tet_v[4 * t + FAC[i][0]]
    g.bf_v[3 * j + 1] = g.tet_v[4 * t + FAC[i][1]]
    g.bf_v[3 * j + 2] = g.tet_v[4 * t + FAC[i][2]]
    g.bf_out[j] = out_ref
    g.bf_in[j] = <unsigned long long> t
    g.n_bf = j + 1
    return C_OK


cdef void _rollback(Eng* g) nogil:
    cdef long long j
    for j in range(g.n_del):
        _unmark_deleted(g, <long long> g.deleted[j])


cdef long long _ghost_seed(Eng* g, long long start, double px, double py,
                           double pz, long long pid) nogil:
    """Returns seed >= 0, or -1 corrupt, -2 ownership abort, -3 overflow."""
    cdef long long nvis = 1, pos = 0, t, u
    cdef int i
    cdef long long k
    cdef bint seen
    g.q[0] = <unsigned long long> start
    while pos < nvis:
        t = <long long> g.q[pos]; pos += 1
        if not _owner_ok(g, t):
            return -2
        if _tet_conflict(g, t, px, py, pz, pid):
            return t
        for i in range(4):
            u = <long long> (g.tet_n[4 * t + i] >> 2)
            if g.tet_v[4 * u + 3] == C_GHOST:
                seen = False
                for k in range(nvis):
                    if <long long> g.q[k] == u:
                        seen = True
                        break
                if not seen:
                    if nvis >= g.ws_cap:
                        return -3
                    g.q[nvis] = <unsigned long long> u
                    nvis += 1
    return -1


cdef int _build_cavity(Eng* g, long long t0, double px, double py, double pz,
                       long long pid) nogil:
    cdef long long seed = t0, qn = 0, head = 0, t, u
    cdef unsigned long long ref
    cdef int i, st
    g.n_del = 0
    g.n_bf = 0
    if g.tet_v[4 * t0 + 3] == C_GHOST and not _tet_conflict(g, t0, px, py, pz, pid):
        seed = _ghost_seed(g, t0, px, py, pz, pid)
        if seed == -2:
            return C_AB_CAVITY
        if seed == -3:
            return C_WS_OVERFLOW
        if seed < 0:
            return C_WALK_STUCK
    g.q[qn] = <unsigned long long> seed; qn += 1
    _mark_deleted(g, seed)
    g.deleted[g.n_del] = <unsigned long long> seed; g.n_del += 1
    while head < qn:
        t = <long long> g.q[head]; head += 1
        for i in range(4):
            ref = g.tet_n[4 * t + i]
            if g.refine_mode and g.constrained[4 * t + i]:
                st = _push_bf(g, t, i, ref)
                if st != C_OK:
                    _rollback(g)
                    return st
                continue
            u = <long long> (ref >> 2)
            if _is_deleted(g, u):
                continue
            if not _owner_ok(g, u):
                _rollback(g)
                return C_AB_CAVITY
            if _tet_conflict(g, u, px, py, pz, pid):
                if qn >= g.ws_cap or g.n_del >= g.ws_cap:
                    _rollback(g)
                    return C_WS_OVERFLOW
                _mark_deleted(g, u)
                g.deleted[g.n_del] = <unsigned long long> u; g.n_del += 1
                g.q[qn] = <unsigned long long> u; qn += 1
            else:
                st = _push_bf(g, t, i, ref)
                if st != C_OK:
                    _rollback(g)
                    return st
    return C_OK


cdef int _rebuild_cavity(Eng* g, long long enclosing) nogil:
    """Re-BFS over still-marked tets; unreachable ones are unmarked."""
    cdef long long qn = 0, head = 0, t, u, j
    cdef unsigned long long ref
    cdef int i, st
    # unmark-on-visit collects the reachable set in q
    if not _is_deleted(g, enclosing):
        return C_WALK_STUCK
    _unmark_deleted(g, enclosing)
    g.q[qn] = <unsigned long long> enclosing; qn += 1
    head = 0
    while head < qn:
        t = <long long> g.q[head]; head += 1
        for i in range(4):
            if g.refine_mode and g.constrained[4 * t + i]:
                continue
            u = <long long> (g.tet_n[4 * t + i] >> 2)
            if _is_deleted(g, u):
                _unmark_deleted(g, u)
                if qn >= g.ws_cap:
                    return C_WS_OVERFLOW
                g.q[qn] = <unsigned long long> u; qn += 1
    # anything in the old deleted list not reached stays unmarked (pruned)
    g.n_del = 0
    for j in range(qn):
        t = <long long> g.q[j]
        _mark_deleted(g, t)
        g.deleted[g.n_del] = <unsigned long long> t; g.n_del += 1
    g.n_bf = 0
    for j in range(g.n_del):
        t = <long long> g.deleted[j]
        for i in range(4):
            ref = g.tet_n[4 * t + i]
            u = <long long> (ref >> 2)
            if (g.refine_mode and g.constrained[4 * t + i]) or not _is_deleted(g, u):
                st = _push_bf(g, t, i, ref)
                if st != C_OK:
                    return st
    return C_OK


cdef int _shrink_to_star(Eng* g, long long enclosing, double px, double py,
                         double pz) nogil:
    cdef long long bad, j, drop
    cdef long long fa, fb, fc
    cdef int o, st
    while True:
        bad = -1
        for j in range(g.n_bf):
            if _is_deleted(g, <long long> (g.bf_out[j] >> 2)):
                bad = j
                break
            fa = g.bf_v[3 * j]; fb = g.bf_v[3 * j + 1]; fc = g.bf_v[3 * j + 2]
            if fa == C_GHOST or fb == C_GHOST or fc == C_GHOST:
                continue
            o = _orient3d(g.pts[3 * fa], g.pts[3 * fa + 1], g.pts[3 * fa + 2],
                          g.pts[3 * fb], g.pts[3 * fb + 1], g.pts[3 * fb + 2],
                          g.pts[3 * fc], g.pts[3 * fc + 1], g.pts[3 * fc + 2],
                          px, py, pz, g.o3d_static)
            if o >= 0:
                bad = j
                break
        if bad < 0:
            return C_OK
        drop = <long long> g.bf_in[bad]
        if drop == enclosing:
            _rollback(g)
            return C_AB_STAR
        _unmark_deleted(g, drop)
        st = _rebuild_cavity(g, enclosing)
        if st != C_OK:
            _rollback(g)
            return st


cdef bint _too_close(Eng* g, double px, double py, double pz, double hp) nogil:
    cdef double limit = (g.prox_factor * hp) * (g.prox_factor * hp)
    cdef long long j, v
    cdef double dx, dy, dz
    for j in range(3 * g.n_bf):
        v = g.bf_v[j]
        if v == <long long> C_GHOST:
            continue
        dx = g.pts[3 * v] - px
        dy = g.pts[3 * v + 1] - py
        dz = g.pts[3 * v + 2] - pz
        if dx * dx + dy * dy + dz * dz < limit:
            return True
    return False


cdef int _adopt_range(Eng* g, long long start, long long count) nogil:
    cdef long long pn = g.reg[R_POOL_N], k
    if pn + count > g.pool_cap:
        g.reg[R_PEND_START] = start
        g.reg[R_PEND_COUNT] = count
        return C_NEED_GROW
    for k in range(count):
        _mark_deleted(g, start + k)
        g.pool[pn + k] = <unsigned long long> (start + k)
    g.reg[R_POOL_N] = pn + count
    return C_OK


cdef int _reserve(Eng* g, long long need) nogil:
    cdef long long pool_free = g.pool_cap - g.reg[R_POOL_N]
    cdef long long have, ask, start
    if g.n_del - need > pool_free:
        return C_WS_OVERFLOW
    have = g.reg[R_POOL_N] + g.n_del
    if have >= need:
        return C_OK
    ask = need - have
    if ask < g.chunk:
        ask = g.chunk
    start = tf_fetch_add_i64(&g.counters[0], ask)
    if start + ask > g.capacity:
        g.reg[R_PEND_START] = start
        g.reg[R_PEND_COUNT] = ask
        return C_NEED_GROW
    return _adopt_range(g, start, ask)


cdef int _retriangulate(Eng* g, long long p_id, long long* last_real_out) nogil:
    cdef long long nbf = g.n_bf, serial = g.reg[R_SERIAL]
    cdef long long j, t, pn, w, last_real = -1, nedge = 0, e
    cdef unsigned long long out_ref, key, twin
    cdef unsigned int f0, f1, f2, tmpv
    cdef int nlocal = 0, k, slot
    cdef bint overflow = False
    cdef int ids[3]
    cdef int i1, i2, i3, ra, rb
    cdef long long key_t

    # local ids over the boundary vertices (ghost uses pseudo-id 33)
    for j in range(3 * nbf):
        w = g.bf_v[j]
        if w == <long long> C_GHOST:
            continue
        if g.use_subdet:
            if (g.vscratch[w] >> 6) != serial:
                if nlocal >= 32:
                    overflow = True
                    break
                g.vscratch[w] = (serial << 6) | nlocal
                g.lverts[nlocal] = <unsigned int> w
                nlocal += 1
        else:
            k = -1
            for slot in range(nlocal):
                if g.lverts[slot] == <unsigned int> w:
                    k = slot
                    break
            if k < 0:
                if nlocal >= 32:
                    overflow = True
                    break
                g.lverts[nlocal] = <unsigned int> w
                nlocal += 1

    pn = g.reg[R_POOL_N]
    for j in range(nbf, g.n_del):
        g.pool[pn] = g.deleted[j]
        pn += 1
    g.reg[R_POOL_N] = pn

    for j in range(nbf):
        if j < g.n_del:
            t = <long long> g.deleted[j]
        else:
            g.reg[R_POOL_N] -= 1
            t = <long long> g.pool[g.reg[R_POOL_N]]
        f0 = g.bf_v[3 * j]; f1 = g.bf_v[3 * j + 1]; f2 = g.bf_v[3 * j + 2]
        if f0 == C_GHOST:
            tmpv = f0; f0 = f1; f1 = f2; f2 = tmpv
        elif f1 == C_GHOST:
            tmpv = f1; f1 = f0; f0 = f2; f2 = tmpv
        g.tet_v[4 * t] = <unsigned int> p_id
        g.tet_v[4 * t + 1] = f0
        g.tet_v[4 * t + 2] = f1
        g.tet_v[4 * t + 3] = f2
        out_ref = g.bf_out[j]
        g.tet_n[4 * t] = out_ref
        g.tet_n[out_ref] = <unsigned long long> (4 * t)
        if g.refine_mode:
            g.constrained[4 * t] = g.constrained[out_ref]
            g.constrained[4 * t + 1] = 0
            g.constrained[4 * t + 2] = 0
            g.constrained[4 * t + 3] = 0
        if f2 != C_GHOST:
            last_real = t
        if g.use_subdet:
            _store_subdet(g, t)
        else:
            g.color[t] = 0
        if overflow:
            for slot in range(3):
                if slot == 0:
                    key = ((<unsigned long long> f1) << 32) | f2
                elif slot == 1:
                    key = ((<unsigned long long> f2) << 32) | f0
                else:
                    key = ((<unsigned long long> f0) << 32) | f1
                # the twin wrote the reversed directed edge
                twin_key_search(g, key, t, slot + 1, &nedge)
        else:
            for k in range(3):
                w = f0 if k == 0 else (f1 if k == 1 else f2)
                if w == <long long> C_GHOST:
                    ids[k] = 33
                elif g.use_subdet:
                    ids[k] = <int> (g.vscratch[w] & 63)
                else:
                    for slot in range(nlocal):
                        if g.lverts[slot] == <unsigned int> w:
                            ids[k] = slot
                            break
            i1 = ids[0]; i2 = ids[1]; i3 = ids[2]
            for slot in range(1, 4):
                if slot == 1:
                    ra = i2; rb = i3
                elif slot == 2:
                    ra = i3; rb = i1
                else:
                    ra = i1; rb = i2
                key_t = rb * 34 + ra
                if g.lookup[key_t] != -1:
                    twin = <unsigned long long> g.lookup[key_t]
                    g.tet_n[4 * t + slot] = twin
                    g.tet_n[twin] = <unsigned long long> (4 * t + slot)
                    g.lookup[key_t] = -1
                else:
                    g.lookup[ra * 34 + rb] = 4 * t + slot
    g.vtx_tet[p_id] = <unsigned long long> (g.deleted[0] if last_real < 0
                                            else last_real)
    g.stats[S_DELETED] += g.n_del
    g.stats[S_CREATED] += nbf
    last_real_out[0] = last_real
    return C_OK


cdef void twin_key_search(Eng* g, unsigned long long key, long long t,
                          int slot, long long* nedge) nogil:
    """Overflow-path adjacency: linear search of the reversed directed edge."""
    cdef unsigned long long rev = (key << 32) | (key >> 32)
    cdef long long e
    cdef unsigned long long twin
    for e in range(nedge[0]):
        if g.edge_key[e] == rev:
            twin = g.edge_ref[e]
            g.tet_n[4 * t + slot] = twin
            g.tet_n[twin] = <unsigned long long> (4 * t + slot)
            nedge[0] -= 1
            g.edge_key[e] = g.edge_key[nedge[0]]
            g.edge_ref[e] = g.edge_ref[nedge[0]]
            return
    g.edge_key[nedge[0]] = key
    g.edge_ref[nedge[0]] = <unsigned long long> (4 * t + slot)
    nedge[0] += 1


cdef int _insert_one(Eng* g, long long pid) nogil:
    cdef double px = g.pts[3 * pid], py = g.pts[3 * pid + 1], pz = g.pts[3 * pid + 2]
    cdef long long serial = g.reg[R_SERIAL]
    cdef long long t0, last_real = -1, w
    cdef int st = C_OK, k
    g.reg[R_SERIAL] = serial + 1
    t0 = _walk(g, g.reg[R_LAST], px, py, pz, serial, &st)
    if st != C_OK:
        return st
    for k in range(4):
        w = g.tet_v[4 * t0 + k]
        if w == <long long> C_GHOST or w == pid:
            continue
        if (g.pts[3 * w] == px and g.pts[3 * w + 1] == py
                and g.pts[3 * w + 2] == pz):
            return C_DUP
    st = _build_cavity(g, t0, px, py, pz, pid)
    if st != C_OK:
        return st
    if g.refine_mode:
        st = _shrink_to_star(g, <long long> g.deleted[0], px, py, pz)
        if st != C_OK:
            return st
        if g.prox_factor > 0.0 and _too_close(g, px, py, pz, g.point_h[pid]):
            _rollback(g)
            return C_AB_PROX
    st = _reserve(g, g.n_bf)
    if st != C_OK:
        _rollback(g)
        return st
    st = _retriangulate(g, pid, &last_real)
    if st != C_OK:
        _rollback(g)
        return st
    g.reg[R_LAST] = <long long> g.vtx_tet[pid]
    if last_real >= 0:
        g.reg[R_LAST_REAL] = last_real
    return C_INSERTED_


cdef void _bind(Eng* g, ctx) except *:
    cdef cnp.ndarray a
    a = ctx["pts"]; g.pts = <double*> cnp.PyArray_DATA(a)
    a = ctx["vscratch"]; g.vscratch = <long long*> cnp.PyArray_DATA(a)
    a = ctx["vtx_tet"]; g.vtx_tet = <unsigned long long*> cnp.PyArray_DATA(a)
    a = ctx["tet_v"]; g.tet_v = <unsigned int*> cnp.PyArray_DATA(a)
    a = ctx["tet_n"]; g.tet_n = <unsigned long long*> cnp.PyArray_DATA(a)
    a = ctx["subdet"]; g.subdet = <double*> cnp.PyArray_DATA(a)
    a = ctx["color"]; g.color = <unsigned short*> cnp.PyArray_DATA(a)
    a = ctx["constrained"]; g.constrained = <unsigned char*> cnp.PyArray_DATA(a)
    a = ctx["counters"]; g.counters = <long long*> cnp.PyArray_DATA(a)
    a = ctx["queue"]; g.q = <unsigned long long*> cnp.PyArray_DATA(a)
    g.ws_cap = a.shape[0]
    a = ctx["deleted"]; g.deleted = <unsigned long long*> cnp.PyArray_DATA(a)
    a = ctx["bf_verts"]; g.bf_v = <unsigned int*> cnp.PyArray_DATA(a)
    a = ctx["bf_out"]; g.bf_out = <unsigned long long*> cnp.PyArray_DATA(a)
    g.bf_cap = a.shape[0]
    a = ctx["bf_in"]; g.bf_in = <unsigned long long*> cnp.PyArray_DATA(a)
    a = ctx["lookup"]; g.lookup = <long long*> cnp.PyArray_DATA(a)
    a = ctx["local_verts"]; g.lverts = <unsigned int*> cnp.PyArray_DATA(a)
    a = ctx["edge_key"]; g.edge_key = <unsigned long long*> cnp.PyArray_DATA(a)
    a = ctx["edge_ref"]; g.edge_ref = <unsigned long long*> cnp.PyArray_DATA(a)
    a = ctx["pool"]; g.pool = <unsigned long long*> cnp.PyArray_DATA(a)
    g.pool_cap = a.shape[0]
    a = ctx["reg"]; g.reg = <long long*> cnp.PyArray_DATA(a)
    a = ctx["stats"]; g.stats = <long long*> cnp.PyArray_DATA(a)
    g.use_subdet = bool(ctx["use_subdet"])
    g.ownership = bool(ctx["ownership"])
    g.refine_mode = bool(ctx["refine_mode"])
    a = ctx["part_id"]; g.part_id = <int*> cnp.PyArray_DATA(a)
    g.ghost_part = int(ctx["ghost_part"])
    g.my_part = int(ctx["my_part"])
    a = ctx["point_h"]; g.point_h = <double*> cnp.PyArray_DATA(a)
    g.prox_factor = float(ctx["prox_factor"])
    b = ctx["bounds"]
    g.o3d_static = float(b[0])
    g.isp_static = float(b[1])
    g.cached_static = float(b[2])
    g.audit_every = int(ctx["audit_every"])
    a = ctx["audit_log"]; g.audit_log = <long long*> cnp.PyArray_DATA(a)
    g.audit_cap = a.shape[0]
    g.chunk = int(ctx["chunk"])
    g.capacity = (ctx["subdet"].shape[0] // 4 if g.use_subdet
                  else ctx["color"].shape[0])


def insert_batch(ctx, order, failed, dropped):
    """See tetforge._pykern.insert_batch. Releases the GIL while running."""
    cdef Eng g
    _bind(&g, ctx)
    cdef cnp.ndarray[cnp.uint32_t, ndim=1] order_a = order
    cdef cnp.ndarray[cnp.uint32_t, ndim=1] failed_a = failed
    cdef cnp.ndarray[cnp.uint32_t, ndim=1] dropped_a = dropped
    cdef unsigned int* po = <unsigned int*> cnp.PyArray_DATA(order_a)
    cdef unsigned int* pf = <unsigned int*> cnp.PyArray_DATA(failed_a)
    cdef unsigned int* pd = <unsigned int*> cnp.PyArray_DATA(dropped_a)
    cdef Py_ssize_t end = order_a.shape[0]
    cdef long long i
    cdef int out, result = C_OK
    cdef long long pid
    with nogil:
        if g.reg[R_PEND_COUNT] > 0:
            out = _adopt_range(&g, g.reg[R_PEND_START], g.reg[R_PEND_COUNT])
            if out != C_OK:
                result = out
            else:
                g.reg[R_PEND_COUNT] = 0
        if result == C_OK:
            i = g.reg[R_CURSOR]
            while i < end:
                pid = po[i]
                out = _insert_one(&g, pid)
                if out == C_NEED_GROW or out == C_WS_OVERFLOW or out == C_WALK_STUCK:
                    result = out
                    break
                if out == C_INSERTED_:
                    g.stats[S_INSERTED] += 1
                elif out == C_DUP:
                    pd[g.reg[R_N_DUP]] = <unsigned int> pid
                    g.reg[R_N_DUP] += 1
                    g.stats[S_DUP] += 1
                elif out == C_AB_WALK or out == C_AB_CAVITY:
                    pf[g.reg[R_N_FAIL]] = <unsigned int> pid
                    g.reg[R_N_FAIL] += 1
                    if out == C_AB_WALK:
                        g.stats[S_AB_WALK] += 1
                    else:
                        g.stats[S_AB_CAV] += 1
                elif out == C_AB_CONSTR:
                    g.stats[S_AB_CONSTR] += 1
                elif out == C_AB_PROX:
                    g.stats[S_AB_PROX] += 1
                else:
                    g.stats[S_AB_STAR] += 1
                i += 1
            g.reg[R_CURSOR] = i
    return result


def walk_one(ctx, start, px, py, pz):
    cdef Eng g
    _bind(&g, ctx)
    cdef int st = C_OK
    g.reg[R_SERIAL] += 1
    cdef long long t = _walk(&g, <long long> int(start), float(px), float(py),
                             float(pz), g.reg[R_SERIAL], &st)
    return int(t), int(st)


def cavity_one(ctx, t0, pid):
    cdef Eng g
    _bind(&g, ctx)
    cdef long long p = int(pid)
    cdef double px = g.pts[3 * p], py = g.pts[3 * p + 1], pz = g.pts[3 * p + 2]
    cdef int st = _build_cavity(&g, <long long> int(t0), px, py, pz, p)
    g.reg[R_SERIAL] += 1
    return int(st), int(g.n_del), int(g.n_bf)


def retri_one(ctx, pid, n_del, n_bf):
    cdef Eng g
    _bind(&g, ctx)
    cdef long long last_real = -1
    cdef int st
    if g.reg[R_PEND_COUNT] > 0:
        st = _adopt_range(&g, g.reg[R_PEND_START], g.reg[R_PEND_COUNT])
        if st != C_OK:
            return int(st), -1
        g.reg[R_PEND_COUNT] = 0
    g.n_del = int(n_del)
    g.n_bf = int(n_bf)
    g.reg[R_SERIAL] += 1
    st = _reserve(&g, g.n_bf)
    if st != C_OK:
        _rollback(&g)
        return int(st), -1
    st = _retriangulate(&g, <long long> int(pid), &last_real)
    if st == C_OK:
        g.reg[R_LAST] = <long long> g.vtx_tet[int(pid)]
        g.stats[S_INSERTED] += 1
    return int(st), int(last_real)
