"""Mesh integrity and Delaunay audits.

The structural audit checks adjacency reciprocity, shared-facet
consistency, positive orientation of real tetrahedra, the ghost layer
(exterior facets tiled exactly once, ghost facets facing outward), and
vertex coverage. The optional empty-circumsphere audit certifies the
Delaunay property itself with exact arithmetic on any borderline pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import exact
from ._pykern import FACET, GHOST, O3D_DYN, ISP_DYN
from .meshstore import MeshStore


class AuditError(AssertionError):
    pass


@dataclass
class AuditReport:
    failures: List[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def fail(self, msg: str):
        if len(self.failures) < 50:
            self.failures.append(msg)

    def raise_if_failed(self):
        if self.failures:
            raise AuditError("; ".join(self.failures))


_FACET_IDX = np.array(FACET, dtype=np.int64)


def _orient_signs(pts, a, b, c, d):
    """Vectorized orient3d with exact escalation; returns int8 signs."""
    pa = pts[a]; pb = pts[b]; pc = pts[c]; pd = pts[d]
    bd = pb - pa; cd = pc - pa; dd = pd - pa
    m0 = cd[:, 1] * dd[:, 2] - cd[:, 2] * dd[:, 1]
    m1 = cd[:, 0] * dd[:, 2] - cd[:, 2] * dd[:, 0]
    m2 = cd[:, 0] * dd[:, 1] - cd[:, 1] * dd[:, 0]
    det = bd[:, 0] * m0 - bd[:, 1] * m1 + bd[:, 2] * m2
    perm = (np.abs(bd[:, 0]) * (np.abs(cd[:, 1] * dd[:, 2]) + np.abs(cd[:, 2] * dd[:, 1]))
            + np.abs(bd[:, 1]) * (np.abs(cd[:, 0] * dd[:, 2]) + np.abs(cd[:, 2] * dd[:, 0]))
            + np.abs(bd[:, 2]) * (np.abs(cd[:, 0] * dd[:, 1]) + np.abs(cd[:, 1] * dd[:, 0])))
    err = O3D_DYN * perm
    out = np.sign(det).astype(np.int8)
    unsure = np.abs(det) <= err
    for i in np.nonzero(unsure)[0]:
        out[i] = exact.orient3d_sign(*pts[a[i]], *pts[b[i]], *pts[c[i]],
                                     *pts[d[i]])
    return out


def audit_mesh(mesh: MeshStore, *, empty_sphere: bool = False,
               empty_sphere_cap: int = 3000,
               hull_convexity: bool = False) -> AuditReport:
    rep = AuditReport()
    n = mesh.n_tets
    live = mesh.live_mask()
    tv = mesh.tet_v[:4 * n].reshape(-1, 4).astype(np.int64)
    tn = mesh.tet_n[:4 * n].reshape(-1, 4).astype(np.int64)
    live_ids = np.nonzero(live)[0]
    ghost = tv[:, 3] == GHOST
    rep.stats["live"] = int(live.sum())
    rep.stats["real"] = int((live & ~ghost).sum())
    rep.stats["ghost"] = int((live & ghost).sum())

    if (tv[live] == GHOST)[:, :3].any():
        rep.fail("ghost sentinel outside local slot 3")

    # reciprocity and shared facets
    refs = tn[live_ids]
    if (refs < 0).any() or (refs >= 4 * n).any():
        rep.fail("facet ref out of range")
        rep.raise_if_failed()
    twin_t = refs >> 2
    if not live[twin_t].all():
        rep.fail("live facet points at a deleted tetrahedron")
    back = mesh.tet_n[:4 * n].astype(np.int64)[refs]
    mine = (4 * live_ids[:, None] + np.arange(4)[None, :])
    if not (back == mine).all():
        bad = np.argwhere(back != mine)
        rep.fail(f"reciprocity broken at facet ref {int(mine[tuple(bad[0])])}")

    my_facets = tv[live_ids][:, _FACET_IDX]          # (L, 4, 3)
    tw_facets = np.take_along_axis(tv[twin_t], _FACET_IDX[refs & 3], axis=2)
    if not (np.sort(my_facets, axis=2) == np.sort(tw_facets, axis=2)).all():
        rep.fail("shared facet vertex sets differ across an adjacency")

    # orientation of real live tets
    real_ids = np.nonzero(live & ~ghost)[0]
    if len(real_ids):
        q = tv[real_ids]
        signs = _orient_signs(mesh.pts, q[:, 0], q[:, 1], q[:, 2], q[:, 3])
        if (signs <= 0).any():
            t = int(real_ids[np.nonzero(signs <= 0)[0][0]])
            rep.fail(f"non-positive orientation at tet {t}")

    # ghost layer: real facets of ghosts == exterior facets of real tets,
    # each ghost faces away from the mesh
    ghost_ids = np.nonzero(live & ghost)[0]
    if len(real_ids):
        all_f = np.sort(tv[real_ids][:, _FACET_IDX], axis=2).reshape(-1, 3)
        uniq, counts = np.unique(all_f, axis=0, return_counts=True)
        hull_facets = uniq[counts == 1]
        hull_facets = hull_facets[(hull_facets != GHOST).all(axis=1)]
        gf = np.sort(tv[ghost_ids][:, :3], axis=1)
        if len(gf) != len(hull_facets):
            rep.fail(f"{len(gf)} ghosts vs {len(hull_facets)} hull facets")
        else:
            a = {tuple(r) for r in gf.tolist()}
            b = {tuple(r) for r in hull_facets.tolist()}
            if a != b:
                rep.fail("ghost facets do not tile the hull boundary")
        if len(ghost_ids):
            opp_ref = tn[ghost_ids, 3]
            w = mesh.tet_v[:4 * n].astype(np.int64)[opp_ref]
            g = tv[ghost_ids]
            signs = _orient_signs(mesh.pts, g[:, 0], g[:, 1], g[:, 2], w)
            if (signs >= 0).any():
                t = int(ghost_ids[np.nonzero(signs >= 0)[0][0]])
                rep.fail(f"ghost facet at tet {t} does not face outward")

    # vertex coverage
    referenced = np.zeros(mesh.n_vertices, dtype=bool)
    ref_ids = tv[live_ids].ravel()
    referenced[ref_ids[ref_ids != GHOST]] = True
    exempt = np.zeros(mesh.n_vertices, dtype=bool)
    for v in mesh.duplicates:
        exempt[v] = True
    for v in mesh.unused_vertices:
        exempt[v] = True
    lonely = ~referenced & ~exempt
    if lonely.any():
        rep.fail(f"{int(lonely.sum())} isolated vertices "
                 f"(first: {int(np.nonzero(lonely)[0][0])})")

    if hull_convexity and len(ghost_ids):
        _check_convexity(mesh, tv, ghost_ids, referenced, rep)

    if empty_sphere:
        if rep.stats["real"] and mesh.n_vertices <= empty_sphere_cap:
            _check_empty_spheres(mesh, tv[real_ids], referenced, rep)
        elif mesh.n_vertices > empty_sphere_cap:
            rep.stats["empty_sphere_skipped"] = mesh.n_vertices
    return rep


def _check_convexity(mesh, tv, ghost_ids, referenced, rep):
    pts = mesh.pts
    vids = np.nonzero(referenced)[0]
    for g in ghost_ids:
        a, b, c = tv[g, 0], tv[g, 1], tv[g, 2]
        signs = _orient_signs(pts, np.full(len(vids), a),
                              np.full(len(vids), b), np.full(len(vids), c),
                              vids)
        if (signs > 0).any():
            rep.fail(f"hull facet of ghost {int(g)} has a vertex beyond it")
            return


def _subdets_vec(pa, pb, pc, pd):
    bd = pb - pa; cd = pc - pa; dd = pd - pa
    bl = (bd * bd).sum(1); cl = (cd * cd).sum(1); dl = (dd * dd).sum(1)
    czdl = cd[:, 2] * dl; dzcl = dd[:, 2] * cl
    cydl = cd[:, 1] * dl; dycl = dd[:, 1] * cl
    cxdl = cd[:, 0] * dl; dxcl = dd[:, 0] * cl
    cydz = cd[:, 1] * dd[:, 2]; czdy = cd[:, 2] * dd[:, 1]
    cxdz = cd[:, 0] * dd[:, 2]; czdx = cd[:, 2] * dd[:, 0]
    cxdy = cd[:, 0] * dd[:, 1]; cydx = cd[:, 1] * dd[:, 0]
    s1 = bd[:, 1] * (czdl - dzcl) - bd[:, 2] * (cydl - dycl) + bl * (cydz - czdy)
    s2 = bd[:, 0] * (czdl - dzcl) - bd[:, 2] * (cxdl - dxcl) + bl * (cxdz - czdx)
    s3 = bd[:, 0] * (cydl - dycl) - bd[:, 1] * (cxdl - dxcl) + bl * (cxdy - cydx)
    s4 = bd[:, 0] * (cydz - czdy) - bd[:, 1] * (cxdz - czdx) + bd[:, 2] * (cxdy - cydx)
    p1 = (np.abs(bd[:, 1]) * (np.abs(czdl) + np.abs(dzcl))
          + np.abs(bd[:, 2]) * (np.abs(cydl) + np.abs(dycl))
          + bl * (np.abs(cydz) + np.abs(czdy)))
    p2 = (np.abs(bd[:, 0]) * (np.abs(czdl) + np.abs(dzcl))
          + np.abs(bd[:, 2]) * (np.abs(cxdl) + np.abs(dxcl))
          + bl * (np.abs(cxdz) + np.abs(czdx)))
    p3 = (np.abs(bd[:, 0]) * (np.abs(cydl) + np.abs(dycl))
          + np.abs(bd[:, 1]) * (np.abs(cxdl) + np.abs(dxcl))
          + bl * (np.abs(cxdy) + np.abs(cydx)))
    p4 = (np.abs(bd[:, 0]) * (np.abs(cydz) + np.abs(czdy))
          + np.abs(bd[:, 1]) * (np.abs(cxdz) + np.abs(czdx))
          + np.abs(bd[:, 2]) * (np.abs(cxdy) + np.abs(cydx)))
    return (s1, s2, s3, s4), (p1, p2, p3, p4)


def _check_empty_spheres(mesh, quads, referenced, rep, chunk=128):
    """No referenced vertex strictly inside any real circumsphere."""
    pts = mesh.pts
    vids = np.nonzero(referenced)[0]
    e = pts[vids]
    for lo in range(0, len(quads), chunk):
        q = quads[lo:lo + chunk]
        pa = pts[q[:, 0]]
        (s1, s2, s3, s4), (p1, p2, p3, p4) = _subdets_vec(
            pa, pts[q[:, 1]], pts[q[:, 2]], pts[q[:, 3]])
        ed = e[None, :, :] - pa[:, None, :]
        el = (ed * ed).sum(2)
        det = (-ed[:, :, 0] * s1[:, None] + ed[:, :, 1] * s2[:, None]
               - ed[:, :, 2] * s3[:, None] + el * s4[:, None])
        perm = (np.abs(ed[:, :, 0]) * p1[:, None]
                + np.abs(ed[:, :, 1]) * p2[:, None]
                + np.abs(ed[:, :, 2]) * p3[:, None] + el * p4[:, None])
        err = ISP_DYN * perm
        inside = det < -err
        unsure = np.abs(det) <= err
        for ti, vi in np.argwhere(inside | unsure):
            tet = q[ti]
            v = int(vids[vi])
            if v in (int(tet[0]), int(tet[1]), int(tet[2]), int(tet[3])):
                continue
            sign = exact.insphere_det_sign(
                *pts[tet[0]], *pts[tet[1]], *pts[tet[2]], *pts[tet[3]],
                *pts[v])
            if sign < 0:
                rep.fail(f"vertex {v} strictly inside circumsphere of tet "
                         f"{tet.tolist()}")
                return
