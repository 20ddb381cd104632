"""Invocation traces: the CSV format, parsing, and a seeded generator."""

from __future__ import annotations

import csv
import math
import random
from dataclasses import astuple, dataclass
from pathlib import Path

from ..errors import TraceParseError

HEADER = ("t_ms", "tenant_id", "function_id", "duration_ms", "memory_mb")


@dataclass(frozen=True)
class TraceEvent:
    t_ms: float
    tenant_id: str
    function_id: str
    duration_ms: float
    memory_mb: float


def _number(raw: str, name: str, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise TraceParseError(line, f"{name} is not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise TraceParseError(line, f"{name} is not finite")
    return value


def parse_trace(path: str | Path) -> list[TraceEvent]:
    """Read and validate a trace CSV; events come back sorted by arrival."""
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise TraceParseError(1, f"expected header {','.join(HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise TraceParseError(line, f"expected {len(HEADER)} columns, got {len(row)}")
            t_ms = _number(row[0], "t_ms", line)
            duration = _number(row[3], "duration_ms", line)
            memory = _number(row[4], "memory_mb", line)
            tenant, function = row[1].strip(), row[2].strip()
            if t_ms < 0:
                raise TraceParseError(line, "t_ms must be >= 0")
            if duration <= 0:
                raise TraceParseError(line, "duration_ms must be > 0")
            if memory <= 0:
                raise TraceParseError(line, "memory_mb must be > 0")
            if not tenant or not function:
                raise TraceParseError(line, "tenant_id and function_id must be non-empty")
            events.append(TraceEvent(t_ms, tenant, function, duration, memory))
    events.sort(key=lambda e: e.t_ms)
    return events


def write_trace(events, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for ev in events:
            writer.writerow([_fmt(v) for v in astuple(ev)])


def _fmt(v):
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return v if isinstance(v, str) else repr(v)


def synthesize_trace(
    tenants: int,
    funcs_per_tenant: int,
    rate: float,
    duration_s: float,
    seed: int,
    burst: tuple[int, int] = (1, 4),
    burst_spread_ms: float = 250.0,
    grid_ms: float | None = None,
) -> list[TraceEvent]:
    """Bursty arrivals for ``tenants * funcs_per_tenant`` functions.

    ``rate`` is the mean invocation rate per function (per second). Bursts
    arrive as a Poisson process; each carries ``burst`` (inclusive range)
    invocations spread over ``burst_spread_ms``. Every function gets a fixed
    memory size in [120, 170] MB and a typical duration in [100, 3000] ms
    around which its invocations vary.

    ``grid_ms`` snaps arrivals to the grid and makes durations an odd
    multiple of half the grid, so completions fall halfway between
    arrivals; useful when replaying against wall-clock time.
    """
    if min(tenants, funcs_per_tenant) < 1 or rate <= 0 or duration_s <= 0:
        raise ValueError("tenants, funcs_per_tenant, rate and duration_s must be positive")
    rng = random.Random(seed)
    horizon = duration_s * 1000.0
    lo, hi = burst
    burst_rate = rate / ((lo + hi) / 2.0) / 1000.0
    events = []
    for t in range(tenants):
        for f in range(funcs_per_tenant):
            tenant, function = f"t{t}", f"t{t}-f{f}"
            memory = round(rng.uniform(120, 170), 0 if grid_ms else 1)
            typical = math.exp(rng.uniform(math.log(100), math.log(3000)))
            clock = rng.expovariate(burst_rate)
            while clock < horizon:
                for _ in range(rng.randint(lo, hi)):
                    at = clock + rng.uniform(0, burst_spread_ms)
                    dur = min(3000.0, max(100.0, typical * rng.lognormvariate(0, 0.25)))
                    if grid_ms:
                        at = math.floor(at / grid_ms) * grid_ms
                        dur = min(max(2, round(dur / grid_ms)), math.floor(3000 / grid_ms)) * grid_ms - grid_ms / 2
                    else:
                        at, dur = round(at, 3), round(dur, 3)
                    if at < horizon:
                        events.append(TraceEvent(at, tenant, function, dur, memory))
                clock += rng.expovariate(burst_rate)
    events.sort(key=lambda e: (e.t_ms, e.tenant_id, e.function_id))
    return events


__all__ = ["HEADER", "TraceEvent", "parse_trace", "synthesize_trace", "write_trace"]
