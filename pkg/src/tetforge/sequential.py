"""Single-threaded incremental insertion: walk, cavity, ball.

``triangulate`` is the end-to-end driver: shuffled rounds of geometrically
increasing size, each round ordered along the space-filling curve, then one
insertion per point. The finer-grained operations (``walk``,
``build_cavity``, ``retriangulate``, ``insert_point``) expose the same
kernel steps individually.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import sfc
from . import _pykern as codes
from .engine import KernelContext, run_batch
from .meshstore import MeshStore, init_first_tet


def _mesh_context(mesh: MeshStore, backend="auto") -> KernelContext:
    kc = getattr(mesh, "_seq_ctx", None)
    if kc is None or kc.mesh is not mesh:
        kc = KernelContext(mesh, backend)
        mesh._seq_ctx = kc
    kc.rebind()
    return kc


def triangulate(points, *, seed: int = 0, m: Optional[int] = None,
                k: Optional[float] = None, mode: str = "subdet",
                backend: str = "auto", workers: int = 1) -> MeshStore:
    """Delaunay triangulation of all distinct input points.

    Vertex ids in the result equal input positions; exact duplicates are
    skipped and listed in ``mesh.duplicates``. ``workers`` only affects the
    sorting stage here; insertion is single-threaded.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    plan = sfc.brio_plan(n, seed)
    mesh, consumed = init_first_tet(pts, mode=mode, scan_order=plan.order)
    cfg = sfc.SfcConfig.from_points(pts, m=m, k=k)
    kc = _mesh_context(mesh, backend)
    kc.reg[codes.R_LAST] = 0

    used = np.zeros(n, dtype=bool)
    used[list(consumed)] = True
    duplicates = []
    for start, end in plan.round_slices():
        ids = plan.order[start:end]
        ids = ids[~used[ids]]
        if len(ids) == 0:
            continue
        ordered = sfc.sort_round(pts, cfg, ids=ids, workers=workers,
                                 backend=backend)
        failed, dups = run_batch(kc, ordered)
        if len(failed):
            raise RuntimeError("sequential insertion cannot abort")
        duplicates.extend(int(v) for v in dups)
    mesh.duplicates = duplicates
    mesh.unused_vertices = list(duplicates)
    mesh.run_stats = kc.stats_dict()
    mesh.run_meta = {"seed": int(seed), "workers": 1, "mode": mode,
                     "sfc_depth": cfg.m, "n_points": n}
    return mesh


def walk(mesh: MeshStore, start_tet: int, p, backend="auto") -> int:
    """Tetrahedron whose closure contains p, by visibility walk from
    ``start_tet`` (from a ghost start the walk first steps inside)."""
    kc = _mesh_context(mesh, backend)
    if isinstance(p, (int, np.integer)):
        p = mesh.pts[int(p)]
    x, y, z = (float(v) for v in p)
    tet, status = kc.backend.walk_one(kc.ctx, int(start_tet), x, y, z)
    if status != codes.OK:
        raise RuntimeError("walk failed: mesh is corrupt")
    kc.finish()
    return int(tet)


def build_cavity(mesh: MeshStore, enclosing_tet: int, p, backend="auto"):
    """Conflict cavity of p: returns (deleted tets, boundary facet triples,
    outside facet refs). The mesh is left unchanged."""
    pid = _probe_point(mesh, p)
    kc = _mesh_context(mesh, backend)
    st, n_del, n_bf = kc.backend.cavity_one(kc.ctx, int(enclosing_tet), pid)
    if st != codes.OK:
        raise RuntimeError(f"cavity construction failed (status {st})")
    deleted = kc.ctx["deleted"][:n_del].astype(np.int64)
    tris = kc.ctx["bf_verts"][:3 * n_bf].reshape(-1, 3).copy()
    outs = kc.ctx["bf_out"][:n_bf].copy()
    for t in deleted:  # probe only: leave flags untouched
        _unmark(mesh, int(t))
    kc.finish()
    return deleted, tris, outs


def retriangulate(mesh: MeshStore, enclosing_tet: int, p_id: int,
                  backend="auto") -> np.ndarray:
    """Carve the cavity of vertex ``p_id`` seeded at ``enclosing_tet`` and
    fill it with new tetrahedra; returns the created tet indices."""
    kc = _mesh_context(mesh, backend)
    st, n_del, n_bf = kc.backend.cavity_one(kc.ctx, int(enclosing_tet),
                                            int(p_id))
    if st != codes.OK:
        raise RuntimeError(f"cavity construction failed (status {st})")
    while True:
        st, _last = kc.backend.retri_one(kc.ctx, int(p_id), n_del, n_bf)
        if st == codes.OK:
            break
        if st == codes.NEED_GROW:
            mesh.grow_tets(int(mesh.counters[0]))
            kc.rebind()
            kc.ensure_pool(int(kc.reg[codes.R_PEND_COUNT]) + 1)
            st2, n_del, n_bf = kc.backend.cavity_one(
                kc.ctx, int(enclosing_tet), int(p_id))
            if st2 != codes.OK:
                raise RuntimeError("cavity construction failed on retry")
        elif st == codes.WS_OVERFLOW:
            raise RuntimeError("workspace overflow in retriangulate")
        else:
            raise RuntimeError(f"retriangulation failed (status {st})")
    kc.finish()
    created = [t for t in range(mesh.n_tets)
               if not mesh.is_deleted(t) and int(mesh.tet_v[4 * t]) == int(p_id)]
    return np.asarray(created, dtype=np.int64)


def insert_point(mesh: MeshStore, last_tet: int, p_id: int, backend="auto"):
    """Insert stored vertex ``p_id``; returns (new last tet, inserted flag).

    Exact duplicates of existing vertices are skipped unchanged.
    """
    kc = _mesh_context(mesh, backend)
    kc.reg[codes.R_LAST] = int(last_tet)
    failed, dups = run_batch(kc, np.asarray([p_id], dtype=np.uint32))
    if len(failed):
        raise RuntimeError("sequential insertion cannot abort")
    if len(dups):
        mesh.duplicates.append(int(p_id))
        mesh.unused_vertices.append(int(p_id))
        return int(kc.reg[codes.R_LAST]), False
    return int(kc.reg[codes.R_LAST]), True


def _probe_point(mesh: MeshStore, p) -> int:
    """Vertex id for probe coordinates (appends a scratch vertex if needed)."""
    if isinstance(p, (int, np.integer)):
        return int(p)
    arr = np.asarray(p, dtype=np.float64).reshape(3)
    ids = mesh.add_points(arr[None, :])
    mesh.unused_vertices.append(int(ids[0]))
    return int(ids[0])


def _unmark(mesh: MeshStore, t: int):
    if mesh.mode == "subdet":
        mesh._store_subdet(t)
    else:
        mesh.color[t] = 0
