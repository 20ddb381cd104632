"""Convert the public Azure Functions 2019 trace into the replay CSV format.

Inputs are one day's files from the dataset:

* ``invocations_per_function_md.anon.dXX.csv``: HashOwner, HashApp,
  HashFunction, Trigger, then per-minute counts in columns ``1`` .. ``1440``;
* ``function_durations_percentiles.anon.dXX.csv``: per-function ``Average``
  duration in ms;
* ``app_memory_percentiles.anon.dXX.csv``: per-app ``AverageAllocatedMb``.

Mapping: tenant = HashOwner, function = HashFunction, duration = the
function's average duration, memory = its app's average allocated memory.
A minute with ``n`` invocations yields ``n`` arrivals drawn uniformly
within that minute (seeded). Functions without duration or memory data
are skipped.
"""

from __future__ import annotations

import csv
import random
from pathlib import Path

from .trace import TraceEvent


def _rows(path):
    with open(path, newline="") as fh:
        yield from csv.DictReader(fh)


def convert_azure(
    invocations: str | Path,
    durations: str | Path,
    memory: str | Path,
    start_minute: int = 0,
    minutes: int = 10,
    seed: int = 0,
) -> list[TraceEvent]:
    if start_minute < 0 or minutes < 1 or start_minute + minutes > 1440:
        raise ValueError("window must lie within minutes 0..1440 of the day")
    avg_duration = {}
    for row in _rows(durations):
        try:
            avg_duration[(row["HashOwner"], row["HashApp"], row["HashFunction"])] = float(row["Average"])
        except (KeyError, ValueError):
            continue
    app_memory = {}
    for row in _rows(memory):
        try:
            app_memory[(row["HashOwner"], row["HashApp"])] = float(row["AverageAllocatedMb"])
        except (KeyError, ValueError):
            continue

    rng = random.Random(seed)
    events = []
    for row in _rows(invocations):
        owner, app, func = row["HashOwner"], row["HashApp"], row["HashFunction"]
        duration = avg_duration.get((owner, app, func))
        mem = app_memory.get((owner, app))
        if duration is None or mem is None or mem <= 0:
            continue
        duration = max(1.0, duration)
        for m in range(start_minute, start_minute + minutes):
            count = int(float(row.get(str(m + 1)) or 0))
            base = (m - start_minute) * 60_000.0
            for _ in range(count):
                events.append(TraceEvent(round(base + rng.uniform(0, 60_000.0), 3), owner, func, duration, mem))
    events.sort(key=lambda e: (e.t_ms, e.tenant_id, e.function_id))
    return events
