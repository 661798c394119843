"""Multi-threaded insertion over curve-partitioned point blocks.

Pending points are sorted by curve key and split into equal contiguous
blocks, one per worker; mesh vertices get partition ids from the same key
ranges, and a tetrahedron belongs to the partition holding at least three
of its vertices (the rest form a buffer zone). A worker aborts an insertion
as soon as it touches a tetrahedron it does not own, so no worker ever
writes another partition's data; aborted points are retried after the curve
is reshaped (random per-axis compression plus a cyclic index shift). When
the success ratio or the per-worker load drops too low the worker count is
halved, ending in a sequential sweep, which guarantees termination.

Storage growth uses a global pause: workers return to the driver, one
thread reallocates, workers resume on the fresh arrays.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import sfc
from . import _pykern as codes
from .engine import KernelContext, _any_live_tet
from .meshstore import MeshStore, init_first_tet

RHO_HALVE = 0.2          # halve workers when success ratio drops below
MIN_PER_THREAD = 3000    # or when the per-worker load falls under
RESERVE_CHUNK = 8192     # fresh tetra indices per shared-counter grab
BUFFER = -1


@dataclass(frozen=True)
class PartitionTable:
    """Per-worker [start, end) curve-key ranges; the last is open-ended."""

    starts: np.ndarray
    ends: np.ndarray
    cfg: sfc.SfcConfig
    n_threads: int

    def vertex_partitions(self, keys: np.ndarray) -> np.ndarray:
        """Partition id of every key (searchsorted over range starts)."""
        ids = np.searchsorted(self.starts, keys, side="right") - 1
        return np.clip(ids, 0, self.n_threads - 1).astype(np.int32)


@dataclass
class RoundStats:
    """One parallel attempt: how many points were tried and landed."""

    attempted: int
    inserted: int
    n_threads: int
    brio_round: int

    @property
    def rho(self) -> float:
        return self.inserted / self.attempted if self.attempted else 1.0

    def as_dict(self):
        return {"attempted": self.attempted, "inserted": self.inserted,
                "rho": round(self.rho, 4), "threads": self.n_threads,
                "brio_round": self.brio_round}


def _owned_start_tet(mesh: MeshStore, vparts: np.ndarray, ghost_part: int,
                     part: int) -> int:
    """A live tetrahedron owned by ``part``, found via vertex hints.

    Falls back to any live tetrahedron (the walk then aborts and the
    points are retried later) when the partition holds nothing usable.
    """
    tv = mesh.tet_v
    cand = np.nonzero(vparts[:mesh.n_vertices] == part)[0]
    step = max(1, len(cand) // 64)
    for v in cand[::step][:64]:
        t = int(mesh.vtx_tet[v])
        if t == 0xFFFFFFFFFFFFFFFF or t >= mesh.n_tets or mesh.is_deleted(t):
            continue
        mine = 0
        for k in range(4):
            w = int(tv[4 * t + k])
            pid = ghost_part if w == 0xFFFFFFFF else int(vparts[w])
            if pid == part:
                mine += 1
        if mine >= 3:
            return t
    return _any_live_tet(mesh)


def partition_points(sorted_keys: np.ndarray, sorted_ids: np.ndarray,
                     n_threads: int, cfg: sfc.SfcConfig):
    """Split curve-sorted points into equal blocks with key-aligned ranges.

    Block boundaries snap forward past runs of equal keys so that every
    point's key falls inside its own block's range.
    """
    n = len(sorted_ids)
    cuts = [0]
    for j in range(1, n_threads):
        c = n * j // n_threads
        while 0 < c < n and sorted_keys[c] == sorted_keys[c - 1]:
            c += 1
        c = max(c, cuts[-1])
        cuts.append(min(c, n))
    cuts.append(n)
    starts = np.zeros(n_threads, dtype=np.uint64)
    ends = np.empty(n_threads, dtype=np.uint64)
    ends[-1] = np.uint64(0xFFFFFFFFFFFFFFFF)
    for j in range(n_threads):
        if j > 0:
            starts[j] = sorted_keys[cuts[j]] if cuts[j] < n else ends[j - 1]
        if j < n_threads - 1:
            ends[j] = sorted_keys[cuts[j + 1]] if cuts[j + 1] < n else starts[j]
    blocks = [sorted_ids[cuts[j]:cuts[j + 1]] for j in range(n_threads)]
    return PartitionTable(starts, ends, cfg, n_threads), blocks


def owner_of_tet(vertex_parts, ghost_part: Optional[int] = None) -> int:
    """Partition owning a tetrahedron: >= 3 vertices agree, else BUFFER.

    ``vertex_parts`` holds four partition ids; pass ``ghost_part`` already
    substituted for the ghost vertex, or via the keyword.
    """
    parts = list(vertex_parts)
    if ghost_part is not None:
        parts = [ghost_part if p is None else p for p in parts]
    for p in set(parts):
        if parts.count(p) >= 3:
            return int(p)
    return BUFFER


def reduction_policy(rho: float, n_threads: int, remaining: int) -> int:
    """Next worker count from the last attempt's success ratio and load."""
    if n_threads <= 1:
        return 1
    nxt = n_threads
    if rho < RHO_HALVE or remaining < MIN_PER_THREAD * n_threads:
        nxt = max(1, n_threads // 2)
    if rho <= 1.0 / n_threads:
        nxt = 1
    return nxt


def reshuffle(cfg: sfc.SfcConfig, seed: Optional[int]) -> sfc.SfcConfig:
    """New curve shape: random per-axis compression plus an index shift.

    ``seed=None`` restores the identity transform (same partitions again).
    """
    if seed is None:
        return cfg.with_transform(sfc.GridTransform.identity())
    return cfg.with_transform(sfc.GridTransform.random(seed, cfg.m))


class _Worker(threading.Thread):
    def __init__(self, kc: KernelContext, block, failed, dropped):
        super().__init__()
        self.kc = kc
        self.block = block
        self.failed = failed
        self.dropped = dropped
        self.status = None

    def run(self):
        self.status = self.kc.backend.insert_batch(
            self.kc.ctx, self.block, self.failed, self.dropped)


def _run_team(mesh: MeshStore, team: List[KernelContext], blocks,
              stop_on_error=True):
    """Run one parallel attempt to completion, pausing globally for growth."""
    n = len(team)
    failed = [np.zeros(len(blocks[j]), dtype=np.uint32) for j in range(n)]
    dropped = [np.zeros(len(blocks[j]) + 1, dtype=np.uint32) for j in range(n)]
    live = list(range(n))
    for j in live:
        team[j].reg[codes.R_CURSOR] = 0
        team[j].reg[codes.R_N_FAIL] = 0
        team[j].reg[codes.R_N_DUP] = 0
    while live:
        workers = [_Worker(team[j], blocks[j], failed[j], dropped[j])
                   for j in live]
        for w in workers:
            w.start()
        for w in workers:
            w.join()
        nxt = []
        grow_to = 0
        for j, w in zip(live, workers):
            if w.status == codes.OK:
                continue
            if w.status == codes.NEED_GROW:
                grow_to = max(grow_to, int(mesh.counters[0]))
                team[j].ensure_pool(int(team[j].reg[codes.R_PEND_COUNT]) + 1)
            elif w.status == codes.WS_OVERFLOW:
                team[j].grow_workspace()
                team[j].ensure_pool(len(team[j].ctx["deleted"]))
            else:
                raise RuntimeError("point location failed during parallel "
                                   "insertion: mesh is corrupt")
            nxt.append(j)
        if grow_to > mesh.tet_capacity:
            # global pause: every worker has returned, one thread reallocates
            mesh.grow_tets(grow_to)
        if nxt:
            for j in range(n):
                team[j].rebind()
        live = nxt
    return failed, dropped


def _verify_audit_logs(team: List[KernelContext], mesh: MeshStore,
                       vparts: np.ndarray, ghost_part: int):
    """Post-hoc ownership audit of sampled accesses.

    Every sampled access a worker considered owned must still resolve to
    that worker (or to the buffer zone, if the owner rewrote the slot for
    a newer tetrahedron) when ownership is recomputed from the partition
    ids. Accesses that triggered aborts are logged with a negative mark.
    """
    for j, kc in enumerate(team):
        log = kc.ctx["audit_log"]
        n = int(log[0])
        for r in range(n):
            t = int(log[3 + 2 * r])
            mark = int(log[3 + 2 * r + 1])
            if mark < 0:
                continue
            verts = mesh.tet_v[4 * t:4 * t + 4].astype(np.int64)
            parts = [ghost_part if v == 0xFFFFFFFF else int(vparts[v])
                     for v in verts]
            owner = owner_of_tet(parts)
            if owner not in (j, BUFFER):
                raise RuntimeError(
                    f"ownership audit: worker {j} accessed tet {t} "
                    f"now owned by {owner}")
        log[0] = 0
        log[1] = 0


def parallel_triangulate(points, *, workers: int = 2, seed: int = 0,
                         m: Optional[int] = None, k: Optional[float] = None,
                         backend: str = "auto", audit_every: int = 0,
                         collect_rounds: Optional[list] = None) -> MeshStore:
    """Delaunay triangulation with concurrent insertion.

    The first shuffled round is inserted sequentially to seed the mesh;
    later rounds run on ``workers`` threads with per-round repartitioning.
    Results are deterministic for a fixed (seed, workers) pair.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    workers = max(1, int(workers))
    plan = sfc.brio_plan(n, seed)
    mesh, consumed = init_first_tet(pts, mode="color", scan_order=plan.order)
    cfg = sfc.SfcConfig.from_points(pts, m=m, k=k)
    rng_salt = sfc.splitmix_stream(seed ^ 0x9E37, 4096)

    seq_kc = KernelContext(mesh, backend, chunk=1)
    used = np.zeros(n, dtype=bool)
    used[list(consumed)] = True
    duplicates: List[int] = []
    rounds: List[RoundStats] = []
    team: List[KernelContext] = []
    resv_lock = threading.Lock()

    def get_team(size):
        while len(team) < size:
            team.append(KernelContext(
                mesh, backend, ownership=True, chunk=RESERVE_CHUNK,
                audit_every=audit_every, resv_lock=resv_lock,
                my_part=len(team)))
        for kc in team:
            kc.rebind()
        return team[:size]

    def seq_insert(ids, round_no):
        from .engine import run_batch
        seq_kc.rebind()
        if seq_kc.reg[codes.R_LAST] >= mesh.n_tets or \
                mesh.is_deleted(int(seq_kc.reg[codes.R_LAST])):
            seq_kc.reg[codes.R_LAST] = _any_live_tet(mesh)
        before = int(seq_kc.stats[codes.S_INSERTED])
        failed, dups = run_batch(seq_kc, ids)
        duplicates.extend(int(v) for v in dups)
        inserted = int(seq_kc.stats[codes.S_INSERTED]) - before
        rounds.append(RoundStats(len(ids), inserted, 1, round_no))

    for round_no, (start, end) in enumerate(plan.round_slices(), start=1):
        ids = plan.order[start:end]
        ids = ids[~used[ids]]
        if len(ids) == 0:
            continue
        if round_no == 1 or workers == 1:
            ordered = sfc.sort_round(pts, cfg, ids=ids, workers=workers,
                                     backend=backend)
            seq_insert(ordered, round_no)
            continue
        pending = ids
        n_threads = workers
        attempt_salt = 0
        while len(pending):
            if n_threads <= 1:
                ordered = sfc.sort_round(pts, cfg, ids=pending,
                                         workers=workers, backend=backend)
                seq_insert(ordered, round_no)
                break
            keys = sfc.moore_keys(pts, cfg, ids=pending, backend=backend)
            skeys, sids = sfc.radix_sort_pairs(
                keys, pending.astype(np.uint64), key_bits=cfg.key_bits(),
                workers=workers, backend=backend)
            sids = sids.astype(np.uint32)
            table, blocks = partition_points(skeys, sids, n_threads, cfg)
            vkeys = sfc.moore_keys(mesh.pts[:mesh.n_vertices], cfg,
                                   backend=backend)
            vparts = table.vertex_partitions(vkeys)
            ghost_part = int(rng_salt[(round_no * 64 + attempt_salt) % 4096]
                             % np.uint64(n_threads))
            crew = get_team(n_threads)
            for j, kc in enumerate(crew):
                kc.ctx["part_id"] = vparts
                kc.ctx["ghost_part"] = ghost_part
                kc.ctx["my_part"] = j
                kc.reg[codes.R_LAST] = _owned_start_tet(
                    mesh, vparts, ghost_part, j)
            failed, dropped = _run_team(mesh, crew, blocks)
            if audit_every:
                _verify_audit_logs(crew, mesh, vparts, ghost_part)
            fails = []
            n_dup = 0
            for j, kc in enumerate(crew):
                nf = int(kc.reg[codes.R_N_FAIL])
                nd = int(kc.reg[codes.R_N_DUP])
                fails.append(failed[j][:nf])
                duplicates.extend(int(v) for v in dropped[j][:nd])
                n_dup += nd
            fails = np.concatenate(fails) if fails else np.zeros(0, np.uint32)
            attempted = len(pending)
            inserted = attempted - len(fails) - n_dup
            rounds.append(RoundStats(attempted, inserted, n_threads, round_no))
            pending = fails
            if len(pending):
                rho = inserted / attempted
                n_threads = reduction_policy(rho, n_threads, len(pending))
                attempt_salt += 1
                cfg = reshuffle(cfg, int(rng_salt[(round_no * 131 +
                                                   attempt_salt) % 4096]))
        used[ids] = True

    mesh.duplicates = duplicates
    mesh.unused_vertices = list(duplicates)
    stats = seq_kc.stats_dict()
    for kc in team:
        for key, val in kc.stats_dict().items():
            stats[key] = stats.get(key, 0) + val
    mesh.run_stats = stats
    mesh.round_stats = [r.as_dict() for r in rounds]
    mesh.run_meta = {"seed": int(seed), "workers": workers, "mode": "color",
                     "sfc_depth": cfg.m, "n_points": n}
    if collect_rounds is not None:
        collect_rounds.extend(rounds)
    return mesh


def try_insert(kc: KernelContext, mesh: MeshStore, p_id: int):
    """Attempt one ownership-checked insertion; aborts are values.

    Returns one of "inserted", "aborted_walk", "aborted_cavity",
    "duplicate". The mesh is untouched on aborts.
    """
    from .engine import run_batch as _unused  # noqa: F401
    kc.rebind()
    order = np.asarray([p_id], dtype=np.uint32)
    failed = np.zeros(1, dtype=np.uint32)
    dropped = np.zeros(2, dtype=np.uint32)
    kc.reg[codes.R_CURSOR] = 0
    kc.reg[codes.R_N_FAIL] = 0
    kc.reg[codes.R_N_DUP] = 0
    before_walk = int(kc.stats[codes.S_AB_WALK])
    before_cav = int(kc.stats[codes.S_AB_CAV])
    while True:
        st = kc.backend.insert_batch(kc.ctx, order, failed, dropped)
        if st == codes.OK:
            break
        if st == codes.NEED_GROW:
            mesh.grow_tets(int(mesh.counters[0]))
            kc.rebind()
            kc.ensure_pool(int(kc.reg[codes.R_PEND_COUNT]) + 1)
        elif st == codes.WS_OVERFLOW:
            kc.grow_workspace()
        else:
            raise RuntimeError("corrupt mesh in try_insert")
    if int(kc.reg[codes.R_N_DUP]):
        return "duplicate"
    if int(kc.reg[codes.R_N_FAIL]):
        if int(kc.stats[codes.S_AB_WALK]) > before_walk:
            return "aborted_walk"
        return "aborted_cavity"
    return "inserted"


def reserve_tet_block(kc: KernelContext, need: int) -> np.ndarray:
    """Grab fresh tetra indices through the shared counter.

    Takes ``max(RESERVE_CHUNK, need)`` slots with one indivisible
    fetch-and-add, flags them deleted and appends them to the context's
    private pool; returns the reserved index range. Grows storage first if
    the reservation would run past capacity (callers must not hold kernel
    views when that happens).
    """
    mesh = kc.mesh
    ask = max(int(kc.ctx["chunk"]), int(need))
    kc.ensure_pool(ask)
    lock = kc.ctx.get("resv_lock")
    if lock is not None:
        with lock:
            start = int(mesh.counters[0])
            mesh.counters[0] = start + ask
    else:
        start = int(mesh.counters[0])
        mesh.counters[0] = start + ask
    if start + ask > mesh.tet_capacity:
        mesh.grow_tets(start + ask)
        kc.rebind()
    pool = kc.ctx["pool"]
    pn = int(kc.reg[codes.R_POOL_N])
    for i in range(ask):
        t = start + i
        if mesh.mode == "subdet":
            mesh.subdet[4 * t + 3] = 1.0
        else:
            mesh.color[t] = codes.DELETED_COLOR
        pool[pn + i] = t
    kc.reg[codes.R_POOL_N] = pn + ask
    return np.arange(start, start + ask, dtype=np.int64)
