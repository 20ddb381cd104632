"""Command-line entry point: ``isovisor {serve,replay,bench,convert-trace,synth-trace}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .errors import TraceParseError
from .gateway import GatewayConfig, serve
from .units import parse_size

POLICIES = ("per-invocation", "per-function", "per-tenant")


def _size(text: str) -> int:
    try:
        return parse_size(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def _non_negative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def load_config_file(path: str | Path) -> dict:
    """Read ``key = value`` lines naming :class:`GatewayConfig` fields."""
    types = {f.name: f.type for f in dataclasses.fields(GatewayConfig)}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        kind = types[key]
        if key == "runtime_memory_cap":
            out[key] = parse_size(value)
        elif kind in ("bool", bool):
            out[key] = value.lower() in ("1", "true", "yes", "on")
        elif kind in ("int", int):
            out[key] = int(value)
        elif kind in ("float", float):
            out[key] = float(value)
        else:
            out[key] = value
    return out


_SERVE_FLAGS = {
    "host": "host", "port": "port", "workers": "worker_count", "queue_capacity": "queue_capacity",
    "memory_cap": "runtime_memory_cap", "ttl": "ttl_seconds", "max_contexts": "max_contexts",
    "share_code_cache": "share_code_cache", "prewarm": "prewarm_n", "reaper_period": "reaper_period",
    "admission_timeout": "admission_timeout",
}


def build_gateway_config(args: argparse.Namespace) -> GatewayConfig:
    values = {}
    path = args.config or os.environ.get("ISOVISOR_CONFIG")
    if path:
        values.update(load_config_file(path))
    for flag, field in _SERVE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[field] = value
    return GatewayConfig(**values).validate()


def _cost_model(args):
    from .replay import CostModel

    return CostModel(
        runtime_cold_start_ms=args.runtime_cold_start_ms,
        isolate_cold_start_us=args.isolate_cold_start_us,
        per_worker_overhead_mb=args.worker_overhead_mb,
        per_isolate_overhead_mb=args.isolate_overhead_mb,
    )


def cmd_serve(args) -> int:
    serve(build_gateway_config(args))
    return 0


def cmd_replay(args) -> int:
    from .replay import compare, compute_metrics, parse_trace, replay

    try:
        events = parse_trace(args.trace)
    except TraceParseError as exc:
        print(f"error: {args.trace}: {exc}", file=sys.stderr)
        return 1
    policies = POLICIES if args.policy == "all" else (args.policy,)
    out = Path(args.out)
    cost = _cost_model(args)
    summaries = {}
    for policy in policies:
        report = replay(
            events, policy, cost, args.global_cap, mode=args.mode,
            worker_cap=args.worker_cap, keep_alive_ms=args.keep_alive * 1000.0,
            isolate_ttl_ms=args.isolate_ttl * 1000.0, max_contexts=args.max_contexts,
            **({"touch": args.touch} if args.mode == "live" else {}),
        )
        target = out / policy if len(policies) > 1 else out
        summaries[policy] = compute_metrics(report, target)
        s = summaries[policy]
        print(f"{policy:<15} events={s['events']} rejected={s['rejected']} "
              f"mem_mean={s['memory_mean_bytes'] / 2**20:.0f}MiB p99={s['latency_p99_ms']:.1f}ms "
              f"workers={s['workers_created']}")
    if len(policies) > 1:
        (out / "comparison.json").write_text(json.dumps(compare(summaries), indent=2) + "\n")
    return 0


def cmd_bench(args) -> int:
    from .bench import format_table, run_bench

    result = run_bench(args.iterations, args.concurrent_isolates)
    print(json.dumps(result, indent=2) if args.json else format_table(result))
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    return 0


def cmd_convert(args) -> int:
    from .replay.azure import convert_azure
    from .replay.trace import write_trace

    events = convert_azure(args.invocations, args.durations, args.memory,
                           args.start_minute, args.minutes, args.seed)
    write_trace(events, args.out)
    print(f"wrote {len(events)} events to {args.out}")
    return 0


def cmd_synth(args) -> int:
    from .replay.trace import synthesize_trace, write_trace

    events = synthesize_trace(args.tenants, args.funcs_per_tenant, args.rate, args.duration_s,
                              args.seed, grid_ms=args.grid_ms)
    write_trace(events, args.out)
    print(f"wrote {len(events)} events to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isovisor", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP runtime")
    p.add_argument("--config", help="key=value file of gateway settings (or $ISOVISOR_CONFIG)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--workers", type=_positive_int)
    p.add_argument("--queue-capacity", type=_positive_int)
    p.add_argument("--memory-cap", type=_size, help="e.g. 2GiB")
    p.add_argument("--ttl", type=_positive_float, help="idle isolate lifetime in seconds")
    p.add_argument("--max-contexts", type=_positive_int)
    p.add_argument("--share-code-cache", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--prewarm", type=_non_negative_int)
    p.add_argument("--reaper-period", type=_positive_float)
    p.add_argument("--admission-timeout", type=_non_negative_float)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="replay a trace under one or all policies")
    p.add_argument("--trace", required=True)
    p.add_argument("--policy", choices=POLICIES + ("all",), default="all")
    p.add_argument("--mode", choices=("sim", "live"), default="sim")
    p.add_argument("--out", default="replay-out")
    p.add_argument("--global-cap", type=_size, default=16 << 30)
    p.add_argument("--worker-cap", type=_size, default=2 << 30)
    p.add_argument("--keep-alive", type=_non_negative_float, default=60.0, help="seconds")
    p.add_argument("--isolate-ttl", type=_non_negative_float, default=10.0, help="seconds")
    p.add_argument("--max-contexts", type=_positive_int, default=4)
    p.add_argument("--runtime-cold-start-ms", type=_non_negative_float, default=200.0)
    p.add_argument("--isolate-cold-start-us", type=_non_negative_float, default=500.0)
    p.add_argument("--worker-overhead-mb", type=_non_negative_float, default=30.0)
    p.add_argument("--isolate-overhead-mb", type=_non_negative_float, default=1.0)
    p.add_argument("--touch", action="store_true", help="live mode: write every allocated page")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("bench", help="cold/warm start micro-benchmark")
    p.add_argument("--iterations", type=_positive_int, default=1000)
    p.add_argument("--concurrent-isolates", type=_non_negative_int, default=0)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("convert-trace", help="convert Azure Functions trace files to trace CSV")
    p.add_argument("--invocations", required=True)
    p.add_argument("--durations", required=True)
    p.add_argument("--memory", required=True)
    p.add_argument("--start-minute", type=_non_negative_int, default=0)
    p.add_argument("--minutes", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth-trace", help="generate a seeded synthetic trace")
    p.add_argument("--tenants", type=_positive_int, default=8)
    p.add_argument("--funcs-per-tenant", type=_positive_int, default=4)
    p.add_argument("--rate", type=_positive_float, default=0.02, help="invocations/s per function")
    p.add_argument("--duration-s", type=_positive_float, default=600.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--grid-ms", type=_positive_float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        if args.command == "serve" and isinstance(exc, ValueError):
            parser.error(str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
