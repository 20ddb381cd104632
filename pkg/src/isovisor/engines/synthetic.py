"""Synthetic functions: allocate a given amount of memory and run for a given time.

The code artifact is a JSON document::

    {"alloc_mb": 10, "run_ms": 50, "echo": false}

With ``"params_from_args": true`` the invocation arguments may override
``alloc_mb`` and ``run_ms``, which lets one registered function replay
trace events of varying size.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

from ..errors import GuestError
from ..memory import MiB, Arena
from ..registry import FunctionDescriptor
from .base import GuestContext, GuestEngine

_KEYS = {"alloc_mb", "run_ms", "echo", "params_from_args"}


@dataclass(frozen=True)
class SyntheticSpec:
    alloc_mb: float = 0
    run_ms: float = 0
    echo: bool = False
    params_from_args: bool = False

    @classmethod
    def parse(cls, raw: bytes | str) -> "SyntheticSpec":
        try:
            doc = json.loads(raw)
        except (ValueError, UnicodeDecodeError) as exc:
            raise GuestError(f"synthetic spec is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise GuestError("synthetic spec must be a JSON object")
        unknown = set(doc) - _KEYS
        if unknown:
            raise GuestError(f"unknown synthetic spec keys: {sorted(unknown)}")
        for key in ("alloc_mb", "run_ms"):
            value = doc.get(key, 0)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
                raise GuestError(f"{key} must be a non-negative number")
        for key in ("echo", "params_from_args"):
            if not isinstance(doc.get(key, False), bool):
                raise GuestError(f"{key} must be a boolean")
        return cls(**doc)

    def dumps(self) -> str:
        return json.dumps(
            {"alloc_mb": self.alloc_mb, "run_ms": self.run_ms, "echo": self.echo,
             "params_from_args": self.params_from_args}
        )


def _override(value, default):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
        return default
    return value


class SyntheticEngine(GuestEngine):
    language = "synthetic"

    def __init__(self, touch: bool = True):
        super().__init__()
        self.touch = touch

    def _compile(self, descriptor: FunctionDescriptor) -> SyntheticSpec:
        return SyntheticSpec.parse(descriptor.code)

    def _new_state(self, ctx: GuestContext) -> dict:
        return {"invocations": 0}

    def exec(self, ctx: GuestContext, fep: str, json_args: str) -> str:
        start = time.monotonic()
        spec: SyntheticSpec = ctx.program.code
        try:
            args = json.loads(json_args) if json_args else {}
        except ValueError as exc:
            raise GuestError(f"arguments are not valid JSON: {exc}") from None
        alloc_mb, run_ms = spec.alloc_mb, spec.run_ms
        if spec.params_from_args and isinstance(args, dict):
            alloc_mb = _override(args.get("alloc_mb"), alloc_mb)
            run_ms = _override(args.get("run_ms"), run_ms)

        nbytes = int(alloc_mb * MiB)
        ctx.allocator.charge(nbytes)
        arena = None
        try:
            arena = Arena(nbytes, touch=self.touch)
            remaining = run_ms / 1000.0 - (time.monotonic() - start)
            if remaining > 0:
                time.sleep(remaining)
        finally:
            if arena is not None:
                arena.close()
            ctx.allocator.release(nbytes)
        ctx.state["invocations"] += 1
        if spec.echo:
            return json.dumps(args, separators=(",", ":"))
        return "{}"
