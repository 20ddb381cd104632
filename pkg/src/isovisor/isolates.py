"""Isolates, the warm-isolate pool, and cross-isolate object handles."""

from __future__ import annotations

import itertools
import logging
import threading
import time
from typing import Any, Callable

from .engines.base import CompiledProgram, GuestContext, GuestEngine
from .errors import HandleError
from .memory import MiB, AccountingAllocator, Arena
from .registry import FunctionDescriptor

log = logging.getLogger(__name__)

BASE_HEAP = MiB


class ObjectHandle:
    """Single-use reference to a value owned by another isolate."""

    def __init__(self, value: Any):
        self._value = value
        self._pinned = True
        self._lock = threading.Lock()

    def retrieve(self) -> Any:
        with self._lock:
            if not self._pinned:
                raise HandleError("handle already retrieved")
            value, self._value, self._pinned = self._value, None, False
            return value

    @property
    def pinned(self) -> bool:
        return self._pinned


class Isolate:
    """A memory-budgeted sandbox hosting invocations of a single function.

    Construction maps and touches the base heap and pre-charges it to the
    allocator, so an isolate whose budget cannot hold the base heap fails
    with :class:`~isovisor.errors.OutOfMemory`. The compiled program is
    produced lazily, once, and shared by up to ``max_contexts`` contexts.
    """

    _ids = itertools.count(1)

    def __init__(
        self,
        descriptor: FunctionDescriptor,
        engine: GuestEngine,
        budget: int,
        max_contexts: int = 4,
        base_heap: int = BASE_HEAP,
        touch: bool = True,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.id = next(self._ids)
        self.descriptor = descriptor
        self.engine = engine
        self.budget = budget
        self.max_contexts = max_contexts
        self.allocator = AccountingAllocator(budget)
        self.allocator.charge(base_heap)
        self.base_heap = base_heap
        self.arena = Arena(base_heap, touch=touch)
        self.program: CompiledProgram | None = None
        self.contexts: list[GuestContext] = []
        self.active = 0
        self.peak_active = 0
        self.peak_contexts = 0
        self.last_used = clock()
        self.doomed = False
        self.destroyed = False
        self.compiles = 0
        self._lock = threading.Lock()

    @property
    def fid(self) -> str:
        return self.descriptor.fid

    def __repr__(self) -> str:
        return f"<Isolate {self.id} fid={self.fid} active={self.active} contexts={len(self.contexts)}>"

    def code_cache(self) -> CompiledProgram:
        with self._lock:
            if self.program is None:
                self.program = self.engine.compile(self.descriptor)
                self.compiles += 1
            return self.program

    def bind_context(self) -> tuple[GuestContext, bool]:
        """Pick a free context for the calling thread, creating one if allowed.

        Prefers the context this thread used last. Returns ``(context, created)``.
        """
        program = self.code_cache()
        tid = threading.get_ident()
        with self._lock:
            free = [c for c in self.contexts if not c.busy]
            free.sort(key=lambda c: c.bound_thread != tid)
            for ctx in free:
                if ctx.acquire():
                    ctx.bound_thread = tid
                    return ctx, False
            if len(self.contexts) >= self.max_contexts:
                raise RuntimeError(f"isolate {self.id} has no free context")
            ctx = self.engine.create_context(program, self.allocator)
            ctx.acquire()
            ctx.bound_thread = tid
            self.contexts.append(ctx)
            self.peak_contexts = max(self.peak_contexts, len(self.contexts))
            return ctx, True

    def destroy(self) -> None:
        with self._lock:
            if self.destroyed:
                return
            self.destroyed = True
            for ctx in self.contexts:
                ctx.close()
            self.contexts.clear()
            self.allocator.release(self.base_heap)
            self.arena.close()
            self.program = None


class IsolatePool:
    """Idle isolates per function, most recently used first.

    ``destroy`` is called (outside the pool lock) for every isolate the pool
    drops: expired by TTL, doomed, or drained.
    """

    def __init__(
        self,
        ttl: float = 10.0,
        clock: Callable[[], float] = time.monotonic,
        destroy: Callable[[Isolate], None] | None = None,
    ):
        self.ttl = ttl
        self.clock = clock
        self._destroy = destroy or Isolate.destroy
        self._idle: dict[str, list[Isolate]] = {}
        self._lock = threading.Lock()

    def _expired(self, iso: Isolate, now: float) -> bool:
        return now - iso.last_used > self.ttl

    def poll(self, fid: str, now: float | None = None) -> Isolate | None:
        now = self.clock() if now is None else now
        dropped = []
        found = None
        with self._lock:
            stack = self._idle.get(fid, [])
            while stack:
                iso = stack.pop()
                if iso.doomed or self._expired(iso, now):
                    dropped.append(iso)
                    continue
                found = iso
                break
            if not stack:
                self._idle.pop(fid, None)
        for iso in dropped:
            self._destroy(iso)
        return found

    def offer(self, fid: str, isolate: Isolate, now: float | None = None) -> None:
        isolate.last_used = self.clock() if now is None else now
        if isolate.doomed:
            self._destroy(isolate)
            return
        with self._lock:
            self._idle.setdefault(fid, []).append(isolate)

    def reap(self, now: float | None = None) -> int:
        now = self.clock() if now is None else now
        dropped = []
        with self._lock:
            for fid in list(self._idle):
                keep = []
                for iso in self._idle[fid]:
                    (dropped if self._expired(iso, now) else keep).append(iso)
                if keep:
                    self._idle[fid] = keep
                else:
                    del self._idle[fid]
        for iso in dropped:
            self._destroy(iso)
        return len(dropped)

    def doom(self, fid: str) -> int:
        with self._lock:
            dropped = self._idle.pop(fid, [])
        for iso in dropped:
            iso.doomed = True
            self._destroy(iso)
        return len(dropped)

    def evict_lru(self) -> bool:
        """Destroy the least recently used idle isolate of any function."""
        with self._lock:
            candidates = [(stack[0].last_used, fid) for fid, stack in self._idle.items() if stack]
            if not candidates:
                return False
            _, fid = min(candidates)
            iso = self._idle[fid].pop(0)
            if not self._idle[fid]:
                del self._idle[fid]
        self._destroy(iso)
        return True

    def drain(self) -> int:
        with self._lock:
            dropped = [iso for stack in self._idle.values() for iso in stack]
            self._idle.clear()
        for iso in dropped:
            self._destroy(iso)
        return len(dropped)

    def count(self, fid: str | None = None) -> int:
        with self._lock:
            if fid is not None:
                return len(self._idle.get(fid, ()))
            return sum(len(s) for s in self._idle.values())

    def __len__(self) -> int:
        return self.count()

    def __contains__(self, isolate: Isolate) -> bool:
        with self._lock:
            return any(isolate in stack for stack in self._idle.values())
