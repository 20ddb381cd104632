"""Exception types shared across the runtime.

Each invocation failure maps onto one outcome string; the gateway turns
outcomes into HTTP status codes.
"""


class IsovisorError(Exception):
    outcome = "error"


class FunctionNotRegistered(IsovisorError):
    outcome = "not-registered"


class OutOfMemory(IsovisorError):
    """A guest breached its isolate budget. The isolate is not reusable."""

    outcome = "oom"


class GlobalMemoryExhausted(IsovisorError):
    """The runtime-wide memory cap cannot admit another isolate."""

    outcome = "rejected-memory"


class GuestError(IsovisorError):
    """Compile failure, missing entry point, or an exception raised by guest code."""

    outcome = "guest-error"


class HandleError(IsovisorError):
    pass


class QueueFull(IsovisorError):
    outcome = "rejected-queue-full"


class TraceParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
