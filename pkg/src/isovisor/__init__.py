"""Single-process serverless runtime hosting functions in pooled, memory-budgeted isolates."""

from .errors import (
    FunctionNotRegistered,
    GlobalMemoryExhausted,
    GuestError,
    HandleError,
    IsovisorError,
    OutOfMemory,
    QueueFull,
    TraceParseError,
)
from .gateway import Gateway, GatewayConfig, HttpFrontend, InvocationRecord, serve
from .registry import FunctionCache, FunctionDescriptor
from .runtime import InvocationResult, Isovisor

__version__ = "0.1.0"

__all__ = [
    "FunctionCache", "FunctionDescriptor", "FunctionNotRegistered", "Gateway", "GatewayConfig",
    "GlobalMemoryExhausted", "GuestError", "HandleError", "HttpFrontend", "InvocationRecord",
    "InvocationResult", "Isovisor", "IsovisorError", "OutOfMemory", "QueueFull",
    "TraceParseError", "serve",
]
