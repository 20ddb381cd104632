"""Wall-clock replay against real runtime instances.

Every worker the cluster model creates becomes a :class:`~isovisor.gateway.Gateway`
over its own :class:`~isovisor.runtime.Isovisor`. A runtime cold start is the
gateway's workers starting ``runtime_cold_start_ms`` after creation;
requests admitted earlier wait in its queue. Each trace event is a
synthetic function call that allocates ``memory_mb`` and runs for
``duration_ms``.
"""

from __future__ import annotations

import json
import logging
import threading
import time

from ..gateway import Gateway, GatewayConfig
from ..memory import GiB, MiB
from .cluster import Cluster, CostModel, Placement, Policy, mb_to_bytes
from .report import EventRecord, ReplayReport
from .trace import TraceEvent

log = logging.getLogger(__name__)

SYNTHETIC_CODE = json.dumps({"alloc_mb": 0, "run_ms": 0, "params_from_args": True}).encode()
# base heap plus context overhead on top of the function's own memory
HEADROOM = 2 * MiB


class _LiveWorker:
    def __init__(self, policy: Policy, mem_by_fid: dict[str, int], cluster: Cluster,
                 touch: bool, boot_delay_s: float):
        self.gateway = Gateway(GatewayConfig(
            worker_count=64 if policy.consolidates else 1,
            queue_capacity=4096,
            # admission is the cluster model's job; the runtime cap must not bind first
            runtime_memory_cap=max(cluster.global_cap, 16 * MiB) * 4,
            ttl_seconds=cluster.isolate_ttl_ms / 1000.0,
            max_contexts=cluster.max_contexts,
            share_code_cache=policy.consolidates,
            admission_timeout=0.0,
            touch_memory=touch,
        ))
        self.mem_by_fid = mem_by_fid
        self._timer = threading.Timer(max(0.0, boot_delay_s), self.gateway.start)
        self._timer.daemon = True
        self._timer.start()

    def submit(self, event: TraceEvent):
        fid = event.function_id
        if fid not in self.gateway.runtime.registry:
            self.gateway.register(SYNTHETIC_CODE, fid, "main", self.mem_by_fid[fid], "synthetic")
        args = json.dumps({"alloc_mb": event.memory_mb, "run_ms": event.duration_ms})
        return self.gateway.submit(fid, args)

    def used_memory(self) -> int:
        return sum(i.allocator.total for i in self.gateway.runtime.live_isolates())

    def close(self) -> None:
        self._timer.cancel()
        self._timer.join()
        self.gateway.start()
        self.gateway.shutdown(deadline=5.0)


def replay_live(
    events: list[TraceEvent],
    policy: Policy | str,
    cost: CostModel | None = None,
    global_cap: int = 16 * GiB,
    touch: bool = False,
    sample_ms: float = 50.0,
    **cluster_kw,
) -> ReplayReport:
    policy = Policy.parse(policy) if isinstance(policy, str) else policy
    cluster = Cluster(policy, cost, global_cap, **cluster_kw)
    events = sorted(events, key=lambda e: e.t_ms)
    mem_by_fid: dict[str, int] = {}
    for ev in events:
        mem_by_fid[ev.function_id] = max(mem_by_fid.get(ev.function_id, 0), mb_to_bytes(ev.memory_mb) + HEADROOM)

    lock = threading.Lock()
    live: dict[int, _LiveWorker] = {}
    records: list[EventRecord] = []
    futures = []
    samples: list[tuple[float, int, int]] = []
    stop_sampling = threading.Event()
    t0 = time.monotonic()

    def now_ms() -> float:
        return (time.monotonic() - t0) * 1000.0

    def footprint() -> tuple[int, int]:
        with lock:
            workers = [(w, live.get(w.id)) for w in cluster.workers]
        total = 0
        for w, lw in workers:
            total += cluster.cost.worker_overhead
            if policy.consolidates:
                total += lw.used_memory() if lw else 0
            else:
                total += w.cap
        return total, len(workers)

    def sampler() -> None:
        while not stop_sampling.wait(sample_ms / 1000.0):
            total, n = footprint()
            samples.append((now_ms(), total, n))

    def on_done(p: Placement, record: EventRecord, future) -> None:
        inv = future.result()
        finish = (inv.finished - t0) * 1000.0
        with lock:
            cluster.finish(p, finish)
        record.start_ms = (inv.started - t0) * 1000.0
        record.finish_ms = finish
        record.isolate_cold = inv.cold
        if inv.outcome != "ok":
            record.outcome = inv.outcome
            log.warning("live invocation %d failed: %s %s", record.index, inv.outcome, inv.error)

    def retire(workers) -> None:
        for w in workers:
            lw = live.pop(w.id, None)
            if lw is not None:
                threading.Thread(target=lw.close, daemon=True).start()

    sampling = threading.Thread(target=sampler, daemon=True)
    sampling.start()
    for i, ev in enumerate(events):
        delay = ev.t_ms / 1000.0 - (time.monotonic() - t0)
        if delay > 0:
            time.sleep(delay)
        with lock:
            p = cluster.place(ev, now_ms())
            retired = cluster.retired[:]
            cluster.retired.clear()
            if p is not None and p.created:
                live[p.worker.id] = _LiveWorker(
                    policy, mem_by_fid, cluster, touch, (p.worker.ready_ms - now_ms()) / 1000.0)
        retire(retired)
        if p is None:
            records.append(EventRecord(i, ev, "rejected"))
            continue
        record = EventRecord(i, ev, "ok", p.worker.id, p.created)
        records.append(record)
        future = live[p.worker.id].submit(ev)
        future.add_done_callback(lambda f, p=p, r=record: on_done(p, r, f))
        futures.append(future)

    for f in futures:
        f.result()
    stop_sampling.set()
    sampling.join()
    for lw in list(live.values()):
        lw.close()

    horizon = max((r.finish_ms for r in records if r.finish_ms is not None), default=0.0)
    with lock:
        cluster.close()
    mem, workers = _bucket(samples, horizon)
    return ReplayReport(
        policy=policy.value, mode="live", records=records,
        memory_timeline=mem, worker_timeline=workers,
        workers_created=cluster.workers_created,
        peak_memory_bytes=max((s[1] for s in samples), default=0),
    )


def _bucket(samples, horizon_ms: float, bucket_ms: float = 1000.0):
    n = int(-(-horizon_ms // bucket_ms))
    mem, workers = [0] * n, [0] * n
    for t, total, count in samples:
        b = int(t // bucket_ms)
        if b < n:
            mem[b] = max(mem[b], total)
            workers[b] = max(workers[b], count)
    return mem, workers
