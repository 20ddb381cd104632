"""Worker admission under the three virtualization policies.

The same bookkeeping serves the discrete-event simulator and the live
replayer: both call :meth:`Cluster.place` at an arrival and
:meth:`Cluster.finish` at a completion, with timestamps in milliseconds.

Footprint of a worker (bytes):

* per-invocation: fixed runtime overhead plus the function's memory, held
  for the worker's whole life;
* per-function / per-tenant: fixed runtime overhead, one isolate overhead
  per live isolate, plus the memory of every running invocation.

Idle isolates expire after the isolate TTL and idle workers after the
keep-alive; both are applied lazily with exact expiry timestamps.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

from ..memory import GiB, MiB
from .trace import TraceEvent


class Policy(str, enum.Enum):
    PER_INVOCATION = "per-invocation"
    PER_FUNCTION = "per-function"
    PER_TENANT = "per-tenant"

    def key(self, event: TraceEvent) -> str:
        if self is Policy.PER_TENANT:
            return event.tenant_id
        return event.function_id

    @property
    def consolidates(self) -> bool:
        return self is not Policy.PER_INVOCATION

    @classmethod
    def parse(cls, name: str) -> "Policy":
        return cls(name.strip().lower().replace("_", "-"))


@dataclass
class CostModel:
    runtime_cold_start_ms: float = 200.0
    isolate_cold_start_us: float = 500.0
    per_worker_overhead_mb: float = 30.0
    per_isolate_overhead_mb: float = 1.0

    def __post_init__(self):
        for name in ("runtime_cold_start_ms", "isolate_cold_start_us",
                     "per_worker_overhead_mb", "per_isolate_overhead_mb"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def worker_overhead(self) -> int:
        return int(self.per_worker_overhead_mb * MiB)

    @property
    def isolate_overhead(self) -> int:
        return int(self.per_isolate_overhead_mb * MiB)

    @property
    def isolate_cold_start_ms(self) -> float:
        return self.isolate_cold_start_us / 1000.0


@dataclass(eq=False)
class ModelIsolate:
    id: int
    fid: str
    active: int = 0
    last_used: float = 0.0


@dataclass(eq=False)
class Worker:
    id: int
    key: str
    cap: int
    created_ms: float
    ready_ms: float
    committed: int = 0
    running: int = 0
    idle_since: float | None = None
    last_used: float = 0.0
    invocations: int = 0
    busy: dict[str, list[ModelIsolate]] = field(default_factory=dict)
    idle: dict[str, list[ModelIsolate]] = field(default_factory=dict)

    def isolate_count(self) -> int:
        return sum(map(len, self.busy.values())) + sum(map(len, self.idle.values()))


@dataclass(eq=False)
class Placement:
    event: TraceEvent
    worker: Worker
    isolate: ModelIsolate
    created: bool
    isolate_cold: bool
    arrival_ms: float
    start_ms: float

    @property
    def planned_finish_ms(self) -> float:
        return self.start_ms + self.event.duration_ms


def mb_to_bytes(mb: float) -> int:
    return int(math.ceil(mb * MiB))


class Cluster:
    def __init__(
        self,
        policy: Policy,
        cost: CostModel | None = None,
        global_cap: int = 16 * GiB,
        worker_cap: int = 2 * GiB,
        keep_alive_ms: float = 60_000.0,
        isolate_ttl_ms: float = 10_000.0,
        max_contexts: int = 4,
    ):
        self.policy = Policy(policy)
        self.cost = cost or CostModel()
        self.global_cap = global_cap
        self.worker_cap = worker_cap
        self.keep_alive_ms = keep_alive_ms
        self.isolate_ttl_ms = isolate_ttl_ms
        self.max_contexts = max_contexts if self.policy.consolidates else 1
        self.workers: list[Worker] = []
        self.total = 0
        self.peak_total = 0
        self.changes: list[tuple[float, int, int]] = []
        self.retired: list[Worker] = []
        self.workers_created = 0
        self.isolates_created = 0
        self._ids = itertools.count(1)
        self._iso_ids = itertools.count(1)

    # -- memory bookkeeping ---------------------------------------------------

    def footprint(self, w: Worker) -> int:
        return self.cost.worker_overhead + w.committed

    def _change(self, t: float, d_bytes: int, d_workers: int = 0) -> None:
        self.total += d_bytes
        self.peak_total = max(self.peak_total, self.total)
        self.changes.append((t, d_bytes, d_workers))

    # -- expiry ---------------------------------------------------------------

    def expire(self, now: float) -> list[Worker]:
        """Apply isolate TTLs and worker keep-alives up to ``now``; return retired workers."""
        retired = []
        for w in list(self.workers):
            retire_at = None
            if w.running == 0 and w.idle_since is not None and now - w.idle_since > self.keep_alive_ms:
                retire_at = w.idle_since + self.keep_alive_ms
            for fid, stack in list(w.idle.items()):
                keep = []
                for iso in stack:
                    expires = iso.last_used + self.isolate_ttl_ms
                    if now - iso.last_used > self.isolate_ttl_ms and (retire_at is None or expires < retire_at):
                        self._drop_isolate(w, expires)
                    else:
                        keep.append(iso)
                if keep:
                    w.idle[fid] = keep
                else:
                    del w.idle[fid]
            if retire_at is not None:
                self._change(retire_at, -self.footprint(w), -1)
                w.committed = 0
                w.idle.clear()
                self.workers.remove(w)
                retired.append(w)
        self.retired.extend(retired)
        return retired

    def _drop_isolate(self, w: Worker, t: float) -> None:
        if self.policy.consolidates:
            w.committed -= self.cost.isolate_overhead
            self._change(t, -self.cost.isolate_overhead)

    # -- admission ------------------------------------------------------------

    def _free_isolate(self, w: Worker, fid: str) -> ModelIsolate | None:
        for iso in w.busy.get(fid, ()):
            if iso.active < self.max_contexts:
                return iso
        stack = w.idle.get(fid)
        return stack[-1] if stack else None

    def _admits(self, w: Worker, event: TraceEvent, mem: int) -> bool:
        if not self.policy.consolidates:
            return w.running == 0 and w.cap >= mem
        need = mem if self._free_isolate(w, event.function_id) else mem + self.cost.isolate_overhead
        return w.committed + need <= w.cap and self.total + need <= self.global_cap

    def place(self, event: TraceEvent, now: float) -> Placement | None:
        """Find or create a worker for ``event``; ``None`` means rejected."""
        self.expire(now)
        mem = mb_to_bytes(event.memory_mb)
        key = self.policy.key(event)
        candidates = [w for w in self.workers if w.key == key]
        candidates.sort(key=lambda w: (w.last_used, w.id), reverse=True)
        for w in candidates:
            if self._admits(w, event, mem):
                return self._assign(w, event, now, created=False)

        if self.policy.consolidates:
            cap = self.worker_cap
            need = self.cost.worker_overhead + mem + self.cost.isolate_overhead
            if mem + self.cost.isolate_overhead > cap:
                return None
        else:
            cap = mem
            need = self.cost.worker_overhead + cap
        if self.total + need > self.global_cap:
            return None
        w = Worker(next(self._ids), key, cap, created_ms=now,
                   ready_ms=now + self.cost.runtime_cold_start_ms, last_used=now)
        self.workers.append(w)
        self.workers_created += 1
        self._change(now, self.cost.worker_overhead, +1)
        if not self.policy.consolidates:
            w.committed = cap
            self._change(now, cap)
        return self._assign(w, event, now, created=True)

    def _assign(self, w: Worker, event: TraceEvent, now: float, created: bool) -> Placement:
        fid = event.function_id
        iso = None
        for candidate in w.busy.get(fid, ()):
            if candidate.active < self.max_contexts:
                iso = candidate
                break
        isolate_cold = False
        if iso is None:
            stack = w.idle.get(fid)
            if stack:
                iso = stack.pop()
                if not stack:
                    del w.idle[fid]
            else:
                iso = ModelIsolate(next(self._iso_ids), fid)
                isolate_cold = True
                self.isolates_created += 1
                if self.policy.consolidates:
                    w.committed += self.cost.isolate_overhead
                    self._change(now, self.cost.isolate_overhead)
            w.busy.setdefault(fid, []).append(iso)
        iso.active += 1
        if self.policy.consolidates:
            mem = mb_to_bytes(event.memory_mb)
            w.committed += mem
            self._change(now, mem)
        w.running += 1
        w.invocations += 1
        w.idle_since = None
        w.last_used = now
        start = max(now, w.ready_ms)
        if isolate_cold:
            start += self.cost.isolate_cold_start_ms
        return Placement(event, w, iso, created, isolate_cold, now, start)

    def finish(self, p: Placement, now: float) -> None:
        w, iso = p.worker, p.isolate
        iso.active -= 1
        if iso.active == 0:
            w.busy[iso.fid].remove(iso)
            if not w.busy[iso.fid]:
                del w.busy[iso.fid]
            iso.last_used = now
            w.idle.setdefault(iso.fid, []).append(iso)
        if self.policy.consolidates:
            mem = mb_to_bytes(p.event.memory_mb)
            w.committed -= mem
            self._change(now, -mem)
        w.running -= 1
        w.last_used = now
        if w.running == 0:
            w.idle_since = now

    def close(self) -> None:
        """Expire everything that is left, at its natural expiry time."""
        self.expire(math.inf)

    # -- series ---------------------------------------------------------------

    def timelines(self, horizon_ms: float, bucket_ms: float = 1000.0) -> tuple[list[int], list[int]]:
        """Per-bucket maxima of total footprint and live workers over [0, horizon).

        Changes sharing a timestamp are applied together, and each resulting
        value holds on the half-open interval up to the next change.
        """
        n = max(0, int(math.ceil(horizon_ms / bucket_ms)))
        mem, workers = [0] * n, [0] * n
        merged: dict[float, list[int]] = {}
        for t, d_bytes, d_workers in self.changes:
            acc = merged.setdefault(t, [0, 0])
            acc[0] += d_bytes
            acc[1] += d_workers
        times = sorted(merged)
        total = count = 0
        for i, t in enumerate(times):
            total += merged[t][0]
            count += merged[t][1]
            end = times[i + 1] if i + 1 < len(times) else horizon_ms
            first = int(t // bucket_ms)
            last = min(n, int(math.ceil(end / bucket_ms))) - 1
            for b in range(max(0, first), last + 1):
                mem[b] = max(mem[b], total)
                workers[b] = max(workers[b], count)
        return mem, workers
