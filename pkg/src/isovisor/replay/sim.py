"""Discrete-event replay: deterministic, single-threaded, no wall clock."""

from __future__ import annotations

import heapq
import itertools

from ..memory import GiB
from .cluster import Cluster, CostModel, Policy
from .report import EventRecord, ReplayReport
from .trace import TraceEvent


def replay_sim(
    events: list[TraceEvent],
    policy: Policy | str,
    cost: CostModel | None = None,
    global_cap: int = 16 * GiB,
    **cluster_kw,
) -> ReplayReport:
    cluster = Cluster(Policy.parse(policy) if isinstance(policy, str) else policy,
                      cost, global_cap, **cluster_kw)
    records: list[EventRecord] = []
    pending: list = []
    seq = itertools.count()

    def complete_until(t: float) -> None:
        while pending and pending[0][0] <= t:
            finish, _, placement, record = heapq.heappop(pending)
            cluster.finish(placement, finish)
            record.finish_ms = finish

    for i, ev in enumerate(sorted(events, key=lambda e: e.t_ms)):
        complete_until(ev.t_ms)
        p = cluster.place(ev, ev.t_ms)
        if p is None:
            records.append(EventRecord(i, ev, "rejected"))
            continue
        record = EventRecord(i, ev, "ok", p.worker.id, p.created, p.isolate_cold, start_ms=p.start_ms)
        records.append(record)
        heapq.heappush(pending, (p.planned_finish_ms, next(seq), p, record))
    complete_until(float("inf"))

    horizon = max((r.finish_ms for r in records if r.finish_ms is not None), default=0.0)
    cluster.close()
    mem, workers = cluster.timelines(horizon)
    return ReplayReport(
        policy=cluster.policy.value, mode="sim", records=records,
        memory_timeline=mem, worker_timeline=workers,
        workers_created=cluster.workers_created, peak_memory_bytes=cluster.peak_total,
    )
