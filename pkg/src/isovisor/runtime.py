"""The isolate manager and invocation path.

``Isovisor.invoke`` looks the function up, takes a warm isolate (or makes
one), runs the call inside it through object handles, and hands the isolate
back to the pool. With code-cache sharing on, concurrent calls of one
function are co-located in the same isolate, one context each, up to
``max_contexts``.
"""

from __future__ import annotations

import collections
import logging
import threading
import time
from dataclasses import asdict, dataclass
from typing import Callable

from .engines import GuestEngine, default_engines
from .errors import (
    FunctionNotRegistered,
    GlobalMemoryExhausted,
    GuestError,
    IsovisorError,
    OutOfMemory,
)
from .isolates import BASE_HEAP, Isolate, IsolatePool, ObjectHandle
from .memory import GiB, MemoryLedger
from .registry import FunctionCache, FunctionDescriptor

log = logging.getLogger(__name__)


@dataclass
class InvocationResult:
    fid: str
    outcome: str
    output: str | None = None
    error: str | None = None
    cold: bool = False
    isolate_id: int | None = None
    context_id: int | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"

    def as_dict(self) -> dict:
        return asdict(self)


class Isovisor:
    """Registry, engines and isolates of one runtime process.

    ``memory_cap`` bounds the sum of live isolate budgets. When an isolate
    does not fit, idle isolates are evicted first; if that is not enough the
    caller waits up to ``admission_timeout`` seconds for memory to free up.
    """

    def __init__(
        self,
        memory_cap: int = 2 * GiB,
        ttl: float = 10.0,
        max_contexts: int = 4,
        share_code_cache: bool = True,
        prewarm_n: int = 0,
        reaper_period: float = 1.0,
        admission_timeout: float = 0.0,
        base_heap: int = BASE_HEAP,
        engines: dict[str, GuestEngine] | None = None,
        touch_memory: bool = True,
        clock: Callable[[], float] = time.monotonic,
    ):
        if max_contexts < 1:
            raise ValueError("max_contexts must be >= 1")
        self.engines = engines if engines is not None else default_engines(touch=touch_memory)
        self.registry = FunctionCache(self.engines)
        self.registry.on_deregister(self._doom)
        self.ledger = MemoryLedger(memory_cap)
        self.max_contexts = max_contexts
        self.share_code_cache = share_code_cache
        self.prewarm_n = prewarm_n
        self.reaper_period = reaper_period
        self.admission_timeout = admission_timeout
        self.base_heap = base_heap
        self.touch_memory = touch_memory
        self.clock = clock
        self.pool = IsolatePool(ttl=ttl, clock=clock, destroy=self.destroy_isolate)

        # reentrant: pool.poll may destroy expired isolates while we hold it
        self._lock = threading.RLock()
        self._live: dict[int, Isolate] = {}
        self._busy: dict[str, list[Isolate]] = {}
        self._creating: dict[str, threading.Lock] = {}
        self.isolate_create_us: collections.deque[float] = collections.deque(maxlen=4096)
        self.counters = collections.Counter()
        self._reaper: threading.Thread | None = None
        self._stop = threading.Event()

    @property
    def ttl(self) -> float:
        return self.pool.ttl

    # -- function interface -------------------------------------------------

    def register(self, code: bytes, fid: str, fep: str, mem: int, language: str) -> bool:
        if not self.registry.register(code, fid, fep, mem, language):
            return False
        if self.prewarm_n:
            self.prewarm(fid, self.prewarm_n)
        return True

    def deregister(self, fid: str) -> bool:
        return self.registry.deregister(fid)

    def prewarm(self, fid: str, n: int) -> int:
        desc = self.registry.lookup(fid)
        made = 0
        for _ in range(n if desc else 0):
            try:
                iso = self.create_isolate(desc)
            except IsovisorError as exc:
                log.warning("prewarm of %s stopped after %d isolates: %s", fid, made, exc)
                break
            self.pool.offer(fid, iso)
            made += 1
        return made

    def invoke(self, fid: str, json_args: str = "{}") -> InvocationResult:
        desc = self.registry.lookup(fid)
        if desc is None:
            return InvocationResult(fid, FunctionNotRegistered.outcome, error=f"function {fid!r} is not registered")
        try:
            iso, cold = self._acquire(desc)
        except IsovisorError as exc:
            return InvocationResult(fid, exc.outcome, error=str(exc), cold=True)
        self._count("cold_invocations" if cold else "warm_invocations")

        poisoned = False
        try:
            handle = self.run_in_isolate(iso, ObjectHandle(desc), ObjectHandle(json_args))
            output, context_id = handle.retrieve()
            return InvocationResult(fid, "ok", output=output, cold=cold, isolate_id=iso.id, context_id=context_id)
        except GuestError as exc:
            return InvocationResult(fid, exc.outcome, error=str(exc), cold=cold, isolate_id=iso.id)
        except OutOfMemory as exc:
            poisoned = True
            return InvocationResult(fid, exc.outcome, error=str(exc), cold=cold, isolate_id=iso.id)
        except Exception as exc:
            log.exception("unexpected failure in isolate %d", iso.id)
            poisoned = True
            return InvocationResult(fid, GuestError.outcome, error=f"{type(exc).__name__}: {exc}",
                                    cold=cold, isolate_id=iso.id)
        finally:
            self._release(iso, poisoned)

    def call(self, fid: str, json_args: str = "{}") -> str:
        """Like ``invoke`` but returns the output string and raises on failure."""
        result = self.invoke(fid, json_args)
        if result.ok:
            return result.output
        raise {
            FunctionNotRegistered.outcome: FunctionNotRegistered,
            OutOfMemory.outcome: OutOfMemory,
            GlobalMemoryExhausted.outcome: GlobalMemoryExhausted,
        }.get(result.outcome, GuestError)(result.error)

    # -- isolate management ---------------------------------------------------

    def budget_for(self, desc: FunctionDescriptor) -> int:
        return desc.mem * self.max_contexts if self.share_code_cache else desc.mem

    def create_isolate(self, desc: FunctionDescriptor) -> Isolate:
        budget = self.budget_for(desc)
        start = time.perf_counter()
        self._reserve(budget)
        try:
            iso = Isolate(
                desc, self.engines[desc.language], budget,
                max_contexts=self.max_contexts if self.share_code_cache else 1,
                base_heap=self.base_heap, touch=self.touch_memory, clock=self.clock,
            )
        except BaseException:
            self.ledger.release(budget)
            raise
        self.isolate_create_us.append((time.perf_counter() - start) * 1e6)
        with self._lock:
            self._live[iso.id] = iso
            self.counters["isolates_created"] += 1
        return iso

    def run_in_isolate(self, isolate: Isolate, func_handle: ObjectHandle, args_handle: ObjectHandle) -> ObjectHandle:
        desc = func_handle.retrieve()
        json_args = args_handle.retrieve()
        ctx, _ = isolate.bind_context()
        try:
            output = isolate.engine.exec(ctx, desc.fep, json_args)
            ctx.invocations += 1
        finally:
            ctx.release()
            isolate.last_used = self.clock()
        return ObjectHandle((output, ctx.id))

    def reap(self, now: float | None = None) -> int:
        return self.pool.reap(now)

    def drain(self) -> int:
        return self.pool.drain()

    def _reserve(self, budget: int) -> None:
        if budget > self.ledger.cap:
            raise GlobalMemoryExhausted(f"isolate budget {budget} exceeds the memory cap {self.ledger.cap}")
        deadline = time.monotonic() + self.admission_timeout
        while not self.ledger.try_reserve(budget):
            if self.pool.evict_lru():
                self._count("isolates_evicted")
                continue
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise GlobalMemoryExhausted(
                    f"isolate budget {budget} does not fit: "
                    f"{self.ledger.reserved}/{self.ledger.cap} bytes reserved"
                )
            self.ledger.wait_for(budget, remaining)

    def _try_warm(self, desc: FunctionDescriptor) -> Isolate | None:
        with self._lock:
            if self.share_code_cache:
                for iso in self._busy.get(desc.fid, ()):
                    if iso.descriptor is desc and not iso.doomed and iso.active < iso.max_contexts:
                        self._activate(iso)
                        return iso
            iso = self.pool.poll(desc.fid)
            if iso is not None:
                self._busy.setdefault(desc.fid, []).append(iso)
                self._activate(iso)
            return iso

    def _acquire(self, desc: FunctionDescriptor) -> tuple[Isolate, bool]:
        iso = self._try_warm(desc)
        if iso is not None:
            return iso, False
        if not self.share_code_cache:
            return self._activate_new(desc), True
        with self._lock:
            creating = self._creating.setdefault(desc.fid, threading.Lock())
        # one creator per function, so a burst co-locates instead of over-creating
        with creating:
            iso = self._try_warm(desc)
            if iso is not None:
                return iso, False
            return self._activate_new(desc), True

    def _count(self, name: str) -> None:
        with self._lock:
            self.counters[name] += 1

    def _activate(self, iso: Isolate) -> None:
        iso.active += 1
        iso.peak_active = max(iso.peak_active, iso.active)

    def _activate_new(self, desc: FunctionDescriptor) -> Isolate:
        iso = self.create_isolate(desc)
        with self._lock:
            self._busy.setdefault(desc.fid, []).append(iso)
            self._activate(iso)
        return iso

    def _release(self, iso: Isolate, poisoned: bool) -> None:
        with self._lock:
            iso.active -= 1
            if poisoned:
                iso.doomed = True
            idle = iso.active == 0
            if idle:
                self._busy[iso.fid].remove(iso)
                if not self._busy[iso.fid]:
                    del self._busy[iso.fid]
        if not idle:
            return
        if iso.doomed or self.registry.lookup(iso.fid) is not iso.descriptor:
            self.destroy_isolate(iso)
        else:
            self.pool.offer(iso.fid, iso)

    def destroy_isolate(self, iso: Isolate) -> None:
        with self._lock:
            if self._live.pop(iso.id, None) is None:
                return
            self.counters["isolates_destroyed"] += 1
        iso.destroy()
        self.ledger.release(iso.budget)

    def _doom(self, desc: FunctionDescriptor) -> None:
        with self._lock:
            for iso in self._busy.get(desc.fid, ()):
                if iso.descriptor is desc:
                    iso.doomed = True
        self.pool.doom(desc.fid)

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> "Isovisor":
        if self._reaper is None:
            self._stop.clear()
            self._reaper = threading.Thread(target=self._reap_loop, name="isovisor-reaper", daemon=True)
            self._reaper.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._reaper is not None:
            self._reaper.join()
            self._reaper = None

    def close(self) -> None:
        self.stop()
        self.drain()

    def __enter__(self) -> "Isovisor":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()

    def _reap_loop(self) -> None:
        while not self._stop.wait(self.reaper_period):
            n = self.reap()
            if n:
                log.debug("reaped %d idle isolates", n)

    # -- observability --------------------------------------------------------

    @property
    def compiles_total(self) -> int:
        return sum(e.compiles for e in self.engines.values())

    def live_isolates(self) -> list[Isolate]:
        with self._lock:
            return list(self._live.values())

    def metrics(self) -> dict:
        live = self.live_isolates()
        return {
            "accounted_memory_bytes": self.ledger.reserved,
            "used_memory_bytes": sum(i.allocator.total for i in live if not i.destroyed),
            "memory_cap_bytes": self.ledger.cap,
            "live_isolates": len(live),
            "pooled_isolates": len(self.pool),
            "executing_isolates": sum(1 for i in live if i.active),
            "compiles_total": self.compiles_total,
            "cold_invocations_total": self.counters["cold_invocations"],
            "warm_invocations_total": self.counters["warm_invocations"],
            "isolates_created_total": self.counters["isolates_created"],
            "isolates_destroyed_total": self.counters["isolates_destroyed"],
            "registered_functions": len(self.registry),
        }
