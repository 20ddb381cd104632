"""Trace-driven comparison of runtime virtualization policies."""

from .cluster import Cluster, CostModel, Policy
from .live import replay_live
from .report import EventRecord, ReplayReport, compare, compute_metrics
from .sim import replay_sim
from .trace import TraceEvent, parse_trace, synthesize_trace, write_trace


def replay(events, policy, cost=None, global_cap=16 << 30, mode="sim", **kw) -> ReplayReport:
    if mode == "sim":
        return replay_sim(events, policy, cost, global_cap, **kw)
    if mode == "live":
        return replay_live(events, policy, cost, global_cap, **kw)
    raise ValueError(f"unknown replay mode {mode!r}")


__all__ = [
    "Cluster", "CostModel", "EventRecord", "Policy", "ReplayReport", "TraceEvent",
    "compare", "compute_metrics", "parse_trace", "replay", "replay_live", "replay_sim",
    "synthesize_trace", "write_trace",
]
