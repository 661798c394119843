"""Kernel context assembly and the grow/retry loop for batch insertion.

A :class:`KernelContext` bundles the mesh arrays with one worker's private
scratch (cavity workspace, free pool, registers, counters) into the dict
consumed by the backend kernels. Storage growth never happens inside a
kernel: kernels return a status and the driver grows the corresponding
array before re-entering, so all views stay valid while code is running.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from . import _pykern as codes
from .meshstore import MeshStore

_WS_KEYS = ("queue", "deleted", "bf_verts", "bf_out", "bf_in",
            "edge_key", "edge_ref")


class KernelContext:
    """Per-worker kernel state bound to one mesh."""

    def __init__(self, mesh: MeshStore, backend="auto", *, ownership=False,
                 refine=False, part_id=None, ghost_part=0, my_part=0,
                 point_h=None, prox_factor=0.0, audit_every=0,
                 chunk=1, ws_cap=2048, pool_cap=None, resv_lock=None):
        self.mesh = mesh
        self.backend = kernels.get_backend(backend)
        if pool_cap is None:
            pool_cap = max(4 * chunk, 4096)
        self.ctx = {
            "queue": np.zeros(ws_cap, dtype=np.uint64),
            "deleted": np.zeros(ws_cap, dtype=np.uint64),
            "bf_verts": np.zeros(3 * ws_cap, dtype=np.uint32),
            "bf_out": np.zeros(ws_cap, dtype=np.uint64),
            "bf_in": np.zeros(ws_cap, dtype=np.uint64),
            "edge_key": np.zeros(3 * ws_cap, dtype=np.uint64),
            "edge_ref": np.zeros(3 * ws_cap, dtype=np.uint64),
            "lookup": np.full(34 * 34, -1, dtype=np.int64),
            "local_verts": np.zeros(64, dtype=np.uint32),
            "pool": np.zeros(pool_cap, dtype=np.uint64),
            "reg": np.zeros(16, dtype=np.int64),
            "stats": np.zeros(16, dtype=np.int64),
            "use_subdet": 1 if mesh.mode == "subdet" else 0,
            "ownership": 1 if ownership else 0,
            "refine_mode": 1 if refine else 0,
            "part_id": part_id if part_id is not None
                       else np.zeros(0, dtype=np.int32),
            "ghost_part": int(ghost_part),
            "my_part": int(my_part),
            "point_h": point_h if point_h is not None else np.zeros(0),
            "prox_factor": float(prox_factor),
            "bounds": mesh.bounds.as_tuple(),
            "audit_every": int(audit_every),
            "audit_log": np.zeros(3 + 2 * 4096, dtype=np.int64)
                         if audit_every else np.zeros(3, dtype=np.int64),
            "chunk": int(chunk),
            "resv_lock": resv_lock,
        }
        self.rebind()
        self.reg[codes.R_SERIAL] = max(1, int(mesh.counters[1]))
        self.reg[codes.R_LAST] = 0

    @property
    def reg(self):
        return self.ctx["reg"]

    @property
    def stats(self):
        return self.ctx["stats"]

    def rebind(self):
        """Refresh mesh array references (after storage growth)."""
        m = self.mesh
        self.ctx.update(pts=m.pts, vscratch=m.vscratch, vtx_tet=m.vtx_tet,
                        tet_v=m.tet_v, tet_n=m.tet_n, subdet=m.subdet,
                        color=m.color, constrained=m.constrained,
                        counters=m.counters)

    def grow_workspace(self):
        for key in _WS_KEYS:
            arr = self.ctx[key]
            self.ctx[key] = np.resize(arr, 2 * len(arr))

    def ensure_pool(self, min_free: int):
        pool = self.ctx["pool"]
        used = int(self.reg[codes.R_POOL_N])
        if len(pool) - used < min_free:
            self.ctx["pool"] = np.resize(pool, max(2 * len(pool),
                                                   used + min_free))

    def finish(self):
        """Write the running stamp counter back to the mesh."""
        self.mesh.counters[1] = int(self.reg[codes.R_SERIAL])

    def stats_dict(self):
        s = self.stats
        return {
            "walk_steps": int(s[codes.S_WALK_STEPS]),
            "inserted": int(s[codes.S_INSERTED]),
            "deleted": int(s[codes.S_DELETED]),
            "created": int(s[codes.S_CREATED]),
            "insphere_calls": int(s[codes.S_INSPHERE]),
            "duplicates": int(s[codes.S_DUP]),
            "abort_walk": int(s[codes.S_AB_WALK]),
            "abort_cavity": int(s[codes.S_AB_CAV]),
            "abort_constrained": int(s[codes.S_AB_CONSTR]),
            "abort_proximity": int(s[codes.S_AB_PROX]),
            "abort_star": int(s[codes.S_AB_STAR]),
        }


def run_batch(kc: KernelContext, order: np.ndarray):
    """Drive one insertion batch to completion, growing storage as needed.

    Single-worker path: growth is immediate because nobody else holds
    views. Returns (failed ids, duplicate ids).
    """
    mesh = kc.mesh
    order = np.ascontiguousarray(order, dtype=np.uint32)
    failed = np.zeros(len(order), dtype=np.uint32)
    dropped = np.zeros(len(order) + 1, dtype=np.uint32)
    kc.reg[codes.R_CURSOR] = 0
    kc.reg[codes.R_N_FAIL] = 0
    kc.reg[codes.R_N_DUP] = 0
    if kc.reg[codes.R_LAST] >= mesh.n_tets or mesh.is_deleted(int(kc.reg[codes.R_LAST])):
        kc.reg[codes.R_LAST] = _any_live_tet(mesh)
    while True:
        status = kc.backend.insert_batch(kc.ctx, order, failed, dropped)
        if status == codes.OK:
            break
        if status == codes.NEED_GROW:
            need = int(mesh.counters[0])
            if need > mesh.tet_capacity:
                mesh.grow_tets(need)
                kc.rebind()
            kc.ensure_pool(int(kc.reg[codes.R_PEND_COUNT]) + 1)
        elif status == codes.WS_OVERFLOW:
            kc.grow_workspace()
            kc.ensure_pool(len(kc.ctx["deleted"]))
        else:
            raise RuntimeError("point location failed: mesh is corrupt")
    kc.finish()
    nf = int(kc.reg[codes.R_N_FAIL])
    nd = int(kc.reg[codes.R_N_DUP])
    return failed[:nf].copy(), dropped[:nd].copy()


def _any_live_tet(mesh: MeshStore) -> int:
    for t in range(mesh.n_tets):
        if not mesh.is_deleted(t):
            return t
    raise RuntimeError("mesh has no live tetrahedra")
