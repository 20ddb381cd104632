"""Replay results, summary statistics, and plot-ready output files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trace import TraceEvent


@dataclass
class EventRecord:
    index: int
    event: TraceEvent
    outcome: str
    worker_id: int | None = None
    runtime_cold: bool = False
    isolate_cold: bool = False
    start_ms: float | None = None
    finish_ms: float | None = None

    @property
    def latency_ms(self) -> float | None:
        if self.finish_ms is None:
            return None
        return self.finish_ms - self.event.t_ms

    @property
    def queue_ms(self) -> float:
        if self.start_ms is None:
            return 0.0
        return max(0.0, self.start_ms - self.event.t_ms)


@dataclass
class ReplayReport:
    policy: str
    mode: str
    records: list[EventRecord]
    memory_timeline: list[int] = field(default_factory=list)
    worker_timeline: list[int] = field(default_factory=list)
    workers_created: int = 0
    peak_memory_bytes: int = 0
    bucket_ms: float = 1000.0

    @property
    def completed(self) -> list[EventRecord]:
        return [r for r in self.records if r.outcome == "ok"]

    @property
    def rejected(self) -> list[EventRecord]:
        return [r for r in self.records if r.outcome == "rejected"]

    @property
    def failed(self) -> list[EventRecord]:
        return [r for r in self.records if r.outcome not in ("ok", "rejected")]

    @property
    def runtime_cold_starts(self) -> int:
        return sum(r.runtime_cold for r in self.records)

    @property
    def isolate_cold_starts(self) -> int:
        return sum(r.isolate_cold for r in self.records)

    def latencies(self) -> np.ndarray:
        return np.array([r.latency_ms for r in self.completed], dtype=float)

    def percentile(self, q: float) -> float:
        lat = self.latencies()
        return float(np.percentile(lat, q)) if lat.size else 0.0

    @property
    def p50(self) -> float:
        return self.percentile(50)

    @property
    def p90(self) -> float:
        return self.percentile(90)

    @property
    def p99(self) -> float:
        return self.percentile(99)


def compute_metrics(report: ReplayReport, out_dir: str | Path | None = None) -> dict:
    """Summarize a report; with ``out_dir``, also write summary.json and the two CSV series."""
    lat = report.latencies()
    mem = np.array(report.memory_timeline, dtype=float)
    workers = np.array(report.worker_timeline, dtype=float)
    summary = {
        "policy": report.policy,
        "mode": report.mode,
        "events": len(report.records),
        "completed": len(report.completed),
        "rejected": len(report.rejected),
        "failed": len(report.failed),
        "latency_p50_ms": report.p50,
        "latency_p90_ms": report.p90,
        "latency_p99_ms": report.p99,
        "latency_mean_ms": float(lat.mean()) if lat.size else 0.0,
        "memory_mean_bytes": float(mem.mean()) if mem.size else 0.0,
        "memory_max_bytes": float(mem.max()) if mem.size else 0.0,
        "workers_mean": float(workers.mean()) if workers.size else 0.0,
        "workers_peak": int(workers.max()) if workers.size else 0,
        "workers_created": report.workers_created,
        "runtime_cold_starts": report.runtime_cold_starts,
        "isolate_cold_starts": report.isolate_cold_starts,
    }
    if out_dir is not None:
        write_outputs(report, summary, out_dir)
    return summary


def latency_cdf(report: ReplayReport) -> list[tuple[float, float]]:
    lat = np.sort(report.latencies())
    n = lat.size
    return [(float(v), (i + 1) / n) for i, v in enumerate(lat)]


def write_outputs(report: ReplayReport, summary: dict, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "memory_timeline.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "bytes"])
        for i, b in enumerate(report.memory_timeline):
            w.writerow([i * report.bucket_ms / 1000.0, int(b)])
    with open(out / "latency_cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["latency_ms", "fraction"])
        for v, frac in latency_cdf(report):
            w.writerow([round(v, 3), round(frac, 6)])
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


def compare(summaries: dict[str, dict]) -> dict:
    """Relative memory and tail-latency change of each policy against per-invocation."""
    base = summaries.get("per-invocation")
    out = {"policies": summaries}
    if not base:
        return out
    rel = {}
    for name, s in summaries.items():
        entry = {}
        if base["memory_mean_bytes"]:
            entry["memory_mean_reduction"] = 1 - s["memory_mean_bytes"] / base["memory_mean_bytes"]
        if base["latency_p99_ms"]:
            entry["latency_p99_reduction"] = 1 - s["latency_p99_ms"] / base["latency_p99_ms"]
        rel[name] = entry
    out["vs_per_invocation"] = rel
    return out
