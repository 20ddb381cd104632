"""Host-implemented functions addressed by library and symbol name.

Stands in for ahead-of-time compiled functions: the code artifact names a
library, the entry point names a symbol in it, and nothing is compiled at
invocation time.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any, Callable

from ..errors import GuestError
from ..registry import FunctionDescriptor
from .base import GuestContext, GuestEngine

Builtin = Callable[[Any], Any]


def _sha256(args):
    data = args.get("data", "") if isinstance(args, dict) else args
    if not isinstance(data, str):
        data = json.dumps(data, sort_keys=True)
    return {"sha256": hashlib.sha256(data.encode()).hexdigest()}


def _wordcount(args):
    text = args.get("text", "") if isinstance(args, dict) else ""
    return {"words": len(str(text).split())}


STD_LIBRARY: dict[str, Builtin] = {
    "noop": lambda args: {},
    "echo": lambda args: args,
    "sha256": _sha256,
    "wordcount": _wordcount,
}


class PrebuiltEngine(GuestEngine):
    language = "prebuilt"
    supports_compilation_cache = False

    def __init__(self, libraries: dict[str, dict[str, Builtin]] | None = None):
        super().__init__()
        self.libraries = {"std": dict(STD_LIBRARY)}
        if libraries:
            self.libraries.update(libraries)

    def add(self, library: str, symbol: str, fn: Builtin) -> None:
        self.libraries.setdefault(library, {})[symbol] = fn

    def _compile(self, descriptor: FunctionDescriptor) -> dict[str, Builtin]:
        name = descriptor.code.decode(errors="replace").strip()
        try:
            return self.libraries[name]
        except KeyError:
            raise GuestError(f"unknown prebuilt library {name!r}") from None

    def exec(self, ctx: GuestContext, fep: str, json_args: str) -> str:
        fn = ctx.program.code.get(fep)
        if fn is None:
            raise GuestError(f"entry point {fep!r} not found")
        try:
            args = json.loads(json_args) if json_args else {}
            result = fn(args)
            return json.dumps(result, separators=(",", ":"))
        except GuestError:
            raise
        except Exception as exc:
            raise GuestError(f"{type(exc).__name__}: {exc}") from exc
