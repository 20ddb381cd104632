"""Cold/warm start micro-benchmark of the runtime core."""

from __future__ import annotations

import time

import numpy as np

from .memory import MiB
from .runtime import Isovisor

NOOP = b"{}"


def _stats(samples_us: list[float]) -> dict:
    arr = np.asarray(samples_us, dtype=float)
    return {
        "n": int(arr.size),
        "median_us": float(np.median(arr)),
        "p99_us": float(np.percentile(arr, 99)),
        "mean_us": float(arr.mean()),
    }


def run_bench(iterations: int = 1000, concurrent_isolates: int = 0, mem: int = 4 * MiB) -> dict:
    """Measure isolate creation, pool hits, and cold vs warm invocations.

    With ``concurrent_isolates`` > 0 that many extra isolates stay alive
    for the whole run, so creation is measured at that population.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rt = Isovisor(memory_cap=(concurrent_isolates + 8) * mem * 4)
    rt.register(NOOP, "noop", "main", mem, "synthetic")
    rt.register(NOOP, "ballast", "main", mem, "synthetic")
    ballast = [rt.create_isolate(rt.registry.lookup("ballast")) for _ in range(concurrent_isolates)]
    desc = rt.registry.lookup("noop")
    create, poll_hit, cold, warm = [], [], [], []
    clock = time.perf_counter
    try:
        for _ in range(iterations):
            t = clock()
            iso = rt.create_isolate(desc)
            create.append((clock() - t) * 1e6)
            rt.pool.offer("noop", iso)
            t = clock()
            got = rt.pool.poll("noop")
            poll_hit.append((clock() - t) * 1e6)
            rt.pool.offer("noop", got)
            rt.drain()

        for _ in range(iterations):
            t = clock()
            rt.invoke("noop")
            cold.append((clock() - t) * 1e6)
            rt.drain()

        rt.invoke("noop")
        for _ in range(iterations):
            t = clock()
            rt.invoke("noop")
            warm.append((clock() - t) * 1e6)
    finally:
        rt.drain()
        for iso in ballast:
            rt.destroy_isolate(iso)

    result = {
        "iterations": iterations,
        "concurrent_isolates": concurrent_isolates,
        "isolate_cold_create": _stats(create),
        "warm_poll_hit": _stats(poll_hit),
        "cold_invocation": _stats(cold),
        "warm_invocation": _stats(warm),
    }
    cold_med, warm_med = result["cold_invocation"]["median_us"], result["warm_invocation"]["median_us"]
    result["cold_over_warm_median"] = cold_med / warm_med if warm_med else float("inf")
    return result


def format_table(result: dict) -> str:
    rows = ["isolate_cold_create", "warm_poll_hit", "cold_invocation", "warm_invocation"]
    lines = [f"{'measurement':<22}{'n':>7}{'median_us':>12}{'p99_us':>12}"]
    for name in rows:
        s = result[name]
        lines.append(f"{name:<22}{s['n']:>7}{s['median_us']:>12.1f}{s['p99_us']:>12.1f}")
    lines.append(f"cold/warm invocation median ratio: {result['cold_over_warm_median']:.1f}x")
    return "\n".join(lines)
