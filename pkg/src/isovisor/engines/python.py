"""Python guest functions, executed from one shared code object per isolate.

A function is a script defining the entry point at module level::

    counter = 0

    def main(args):
        global counter
        counter += 1
        return {"count": counter}

The entry point receives the decoded JSON arguments and returns any
JSON-serializable value (a returned ``str`` must already be JSON). Each
context executes the script body into its own globals, so module-level
state is private to the context and survives between its invocations.
"""

from __future__ import annotations

import builtins
import json
import sys
import types

from ..errors import GuestError, OutOfMemory
from ..memory import page_round
from ..registry import FunctionDescriptor
from .base import GuestContext, GuestEngine

ALLOWED_MODULES = frozenset({
    "base64", "bisect", "collections", "datetime", "functools", "hashlib", "heapq",
    "itertools", "json", "math", "random", "re", "statistics", "string", "time",
})

_BLOCKED_BUILTINS = {
    "open", "exec", "eval", "compile", "input", "breakpoint", "exit", "quit",
    "help", "globals", "locals", "vars", "memoryview", "__import__",
}


def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    if level != 0 or name.split(".")[0] not in ALLOWED_MODULES:
        raise ImportError(f"import of {name!r} is not allowed in guest code")
    return builtins.__import__(name, globals, locals, fromlist, level)


SAFE_BUILTINS = {k: v for k, v in vars(builtins).items() if k not in _BLOCKED_BUILTINS}
SAFE_BUILTINS["__import__"] = _guarded_import

_SHARED = (types.FunctionType, types.ModuleType, type, types.BuiltinFunctionType)


def state_size(namespace: dict) -> int:
    """Approximate bytes held by a context's globals, excluding shared code and modules."""
    seen: set[int] = set()
    total = 0
    stack = [v for k, v in namespace.items() if k != "__builtins__"]
    while stack:
        obj = stack.pop()
        if id(obj) in seen or isinstance(obj, _SHARED):
            continue
        seen.add(id(obj))
        total += sys.getsizeof(obj)
        if isinstance(obj, dict):
            stack.extend(obj.keys())
            stack.extend(obj.values())
        elif isinstance(obj, (list, tuple, set, frozenset)):
            stack.extend(obj)
    return total


class PythonEngine(GuestEngine):
    language = "python"
    context_overhead = 16 * 4096

    def _compile(self, descriptor: FunctionDescriptor) -> types.CodeType:
        try:
            source = descriptor.code.decode("utf-8")
        except UnicodeDecodeError:
            raise GuestError("script is not valid UTF-8") from None
        if not source.strip():
            raise GuestError("empty script")
        try:
            return compile(source, f"<guest:{descriptor.fid}>", "exec")
        except SyntaxError as exc:
            raise GuestError(f"SyntaxError: {exc}") from None

    def _new_state(self, ctx: GuestContext) -> dict:
        namespace = {"__builtins__": SAFE_BUILTINS, "__name__": "__guest__"}
        try:
            exec(ctx.program.code, namespace)
        except Exception as exc:
            raise GuestError(f"{type(exc).__name__} while loading: {exc}") from exc
        ctx.resize(self.context_overhead + page_round(state_size(namespace)))
        return namespace

    def exec(self, ctx: GuestContext, fep: str, json_args: str) -> str:
        fn = ctx.state.get(fep)
        if not callable(fn):
            raise GuestError(f"entry point {fep!r} not found")
        try:
            args = json.loads(json_args) if json_args else {}
        except ValueError as exc:
            raise GuestError(f"arguments are not valid JSON: {exc}") from None
        try:
            result = fn(args)
        except MemoryError:
            raise OutOfMemory("guest raised MemoryError") from None
        except Exception as exc:
            raise GuestError(f"{type(exc).__name__}: {exc}") from exc
        try:
            if isinstance(result, str):
                json.loads(result)
                out = result
            else:
                out = json.dumps(result, separators=(",", ":"))
        except (TypeError, ValueError) as exc:
            raise GuestError(f"result is not JSON: {exc}") from None
        # state that outgrew the budget leaves the context unusable
        ctx.resize(self.context_overhead + page_round(state_size(ctx.state)))
        return out
