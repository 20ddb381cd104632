"""Engine abstraction shared by every guest language."""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Any

from ..memory import PAGE, AccountingAllocator
from ..registry import FunctionDescriptor


@dataclass(frozen=True)
class CompiledProgram:
    """Immutable compiled form of a function; shared by all contexts of one isolate."""

    fid: str
    language: str
    code: Any = field(repr=False)
    compiled_at: float = field(default_factory=time.monotonic)


class GuestContext:
    """Per-invocation mutable guest state bound to one compiled program.

    A context runs at most one invocation at a time. Its memory (fixed
    overhead plus whatever the engine charges for its state) is returned to
    the allocator by ``close``.
    """

    _ids = itertools.count(1)

    def __init__(self, program: CompiledProgram, allocator: AccountingAllocator, state: Any = None):
        self.id = next(self._ids)
        self.program = program
        self.allocator = allocator
        self.state = state
        self.charged = 0
        self.invocations = 0
        self.bound_thread: int | None = None
        self._busy = threading.Lock()

    def charge(self, nbytes: int) -> None:
        self.allocator.charge(nbytes)
        self.charged += nbytes

    def resize(self, nbytes: int) -> None:
        """Set the context's accounted state size, charging or releasing the difference."""
        delta = nbytes - self.charged
        if delta > 0:
            self.charge(delta)
        elif delta < 0:
            self.allocator.release(-delta)
            self.charged = nbytes

    def acquire(self) -> bool:
        return self._busy.acquire(blocking=False)

    def release(self) -> None:
        self._busy.release()

    @property
    def busy(self) -> bool:
        return self._busy.locked()

    def close(self) -> None:
        if self.charged:
            self.allocator.release(self.charged)
            self.charged = 0
        self.state = None


class GuestEngine:
    """Base class for guest languages.

    Subclasses implement ``_compile``, ``_new_state`` and ``exec``.
    ``compile`` counts successful compilations so the runtime can check
    that each isolate compiles a function only once.
    """

    language = ""
    supports_compilation_cache = True
    context_overhead = PAGE

    def __init__(self) -> None:
        self.compiles = 0
        self._lock = threading.Lock()

    def compile(self, descriptor: FunctionDescriptor) -> CompiledProgram:
        program = CompiledProgram(descriptor.fid, self.language, self._compile(descriptor))
        if self.supports_compilation_cache:
            with self._lock:
                self.compiles += 1
        return program

    def create_context(self, program: CompiledProgram, allocator: AccountingAllocator) -> GuestContext:
        ctx = GuestContext(program, allocator)
        ctx.charge(self.context_overhead)
        try:
            ctx.state = self._new_state(ctx)
        except BaseException:
            ctx.close()
            raise
        return ctx

    def _compile(self, descriptor: FunctionDescriptor) -> Any:
        raise NotImplementedError

    def _new_state(self, ctx: GuestContext) -> Any:
        return {}

    def exec(self, ctx: GuestContext, fep: str, json_args: str) -> str:
        raise NotImplementedError

