"""HTTP front end: a bounded FIFO queue feeding a fixed pool of workers.

Routes (one port)::

    POST /register    {"code": <base64>, "fid", "fep", "mem", "language"} -> true|false
    POST /invoke      {"fid": str, "args": object}                        -> function output
    POST /deregister  {"fid": str}                                        -> true|false
    GET  /metrics     flat JSON object
    GET  /functions   registered function summaries

Failed invocations answer with ``{"outcome": ..., "error": ...}``.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import queue
import signal
import threading
import time
from concurrent.futures import Future
from dataclasses import asdict, dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import QueueFull
from .memory import GiB, MiB
from .runtime import Isovisor

log = logging.getLogger(__name__)

STATUS = {
    "ok": 200,
    "not-registered": 404,
    "guest-error": 500,
    "oom": 507,
    "rejected-queue-full": 503,
    "rejected-memory": 503,
}

MAX_INVOKE_BODY = 4 * MiB
# base64 of a 16 MiB artifact plus the other fields
MAX_REGISTER_BODY = 24 * MiB

LATENCY_BUCKETS_MS = (0.1, 0.5, 1, 2, 5, 10, 25, 50, 100, 250, 500, 1000, 2500, 5000, 10000)


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    worker_count: int = 8
    queue_capacity: int = 1024
    runtime_memory_cap: int = 2 * GiB
    ttl_seconds: float = 10.0
    max_contexts: int = 4
    share_code_cache: bool = True
    prewarm_n: int = 0
    reaper_period: float = 1.0
    admission_timeout: float = 30.0
    touch_memory: bool = True
    shutdown_deadline: float = 10.0

    def validate(self) -> "GatewayConfig":
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.runtime_memory_cap < 16 * MiB:
            raise ValueError("runtime_memory_cap must be at least 16 MiB")
        if self.max_contexts < 1:
            raise ValueError("max_contexts must be >= 1")
        if self.ttl_seconds <= 0 or self.reaper_period <= 0:
            raise ValueError("ttl_seconds and reaper_period must be positive")
        if self.prewarm_n < 0:
            raise ValueError("prewarm_n must be >= 0")
        if not 0 <= self.port <= 65535:
            raise ValueError("port out of range")
        return self

    def build_runtime(self) -> Isovisor:
        return Isovisor(
            memory_cap=self.runtime_memory_cap,
            ttl=self.ttl_seconds,
            max_contexts=self.max_contexts,
            share_code_cache=self.share_code_cache,
            prewarm_n=self.prewarm_n,
            reaper_period=self.reaper_period,
            admission_timeout=self.admission_timeout,
            touch_memory=self.touch_memory,
        )


@dataclass
class InvocationRecord:
    fid: str
    request: str
    enqueued: float
    started: float | None = None
    finished: float | None = None
    outcome: str | None = None
    cold: bool = False
    output: str | None = field(default=None, repr=False)
    error: str | None = None
    isolate_id: int | None = None
    context_id: int | None = None

    @property
    def latency_ms(self) -> float:
        return (self.finished - self.enqueued) * 1000.0

    @property
    def queue_ms(self) -> float:
        return (self.started - self.enqueued) * 1000.0


class LatencyHistogram:
    def __init__(self, buckets=LATENCY_BUCKETS_MS):
        self.bounds = tuple(buckets)
        self.counts = [0] * (len(self.bounds) + 1)
        self.total = 0
        self.sum_ms = 0.0
        self._lock = threading.Lock()

    def observe(self, ms: float) -> None:
        i = next((i for i, b in enumerate(self.bounds) if ms <= b), len(self.bounds))
        with self._lock:
            self.counts[i] += 1
            self.total += 1
            self.sum_ms += ms

    def flat(self, prefix: str = "latency_ms") -> dict:
        with self._lock:
            out, running = {}, 0
            for bound, n in zip(self.bounds, self.counts):
                running += n
                out[f"{prefix}_le_{bound:g}"] = running
            out[f"{prefix}_le_inf"] = self.total
            out[f"{prefix}_count"] = self.total
            out[f"{prefix}_sum"] = round(self.sum_ms, 3)
            return out


_STOP = object()


class Gateway:
    """Queue plus worker pool in front of an :class:`Isovisor`.

    Only invocations are queued; registration and deregistration run on the
    caller's thread.
    """

    def __init__(self, config: GatewayConfig | None = None, runtime: Isovisor | None = None):
        self.config = (config or GatewayConfig()).validate()
        self.runtime = runtime or self.config.build_runtime()
        self._queue: queue.Queue = queue.Queue(maxsize=self.config.queue_capacity)
        self._workers: list[threading.Thread] = []
        self._lock = threading.Lock()
        self.latency = LatencyHistogram()
        self.outcomes: dict[str, int] = {k: 0 for k in STATUS}
        self.executing = 0
        self.peak_executing = 0
        self._accepting = True
        self._started = False

    def start(self) -> "Gateway":
        with self._lock:
            if self._started:
                return self
            self._started = True
        self.runtime.start()
        for i in range(self.config.worker_count):
            t = threading.Thread(target=self._work, name=f"isovisor-worker-{i}", daemon=True)
            t.start()
            self._workers.append(t)
        return self

    def register(self, code: bytes, fid: str, fep: str, mem: int, language: str) -> bool:
        return self.runtime.register(code, fid, fep, mem, language)

    def deregister(self, fid: str) -> bool:
        return self.runtime.deregister(fid)

    def submit(self, fid: str, json_args: str = "{}") -> "Future[InvocationRecord]":
        record = InvocationRecord(fid, json_args, enqueued=time.monotonic())
        future: Future = Future()
        if not self._accepting:
            raise QueueFull("gateway is shutting down")
        try:
            self._queue.put_nowait((record, future))
        except queue.Full:
            self._tally("rejected-queue-full")
            raise QueueFull(f"invocation queue full ({self.config.queue_capacity})") from None
        return future

    def invoke(self, fid: str, json_args: str = "{}", timeout: float | None = None) -> InvocationRecord:
        try:
            return self.submit(fid, json_args).result(timeout)
        except QueueFull as exc:
            now = time.monotonic()
            return InvocationRecord(fid, json_args, now, now, now, QueueFull.outcome, error=str(exc))

    def _tally(self, outcome: str) -> None:
        with self._lock:
            self.outcomes[outcome] = self.outcomes.get(outcome, 0) + 1

    def _work(self) -> None:
        while True:
            item = self._queue.get()
            if item is _STOP:
                self._queue.task_done()
                return
            record, future = item
            with self._lock:
                self.executing += 1
                self.peak_executing = max(self.peak_executing, self.executing)
            record.started = time.monotonic()
            try:
                result = self.runtime.invoke(record.fid, record.request)
                record.outcome = result.outcome
                record.output = result.output
                record.error = result.error
                record.cold = result.cold
                record.isolate_id = result.isolate_id
                record.context_id = result.context_id
            except Exception as exc:
                log.exception("worker failed on %s", record.fid)
                record.outcome, record.error = "guest-error", str(exc)
            finally:
                record.finished = time.monotonic()
                with self._lock:
                    self.executing -= 1
                self._tally(record.outcome)
                self.latency.observe(record.latency_ms)
                future.set_result(record)
                self._queue.task_done()

    @property
    def queue_depth(self) -> int:
        return self._queue.qsize()

    def metrics(self) -> dict:
        out = self.runtime.metrics()
        out["queue_depth"] = self.queue_depth
        out["queue_capacity"] = self.config.queue_capacity
        out["executing_invocations"] = self.executing
        out["peak_executing_invocations"] = self.peak_executing
        out["worker_count"] = self.config.worker_count
        with self._lock:
            for outcome, n in self.outcomes.items():
                out[f"invocations_{outcome.replace('-', '_')}_total"] = n
        out.update(self.latency.flat())
        return out

    def functions(self) -> list[dict]:
        return [d.summary() for d in self.runtime.registry.list()]

    def shutdown(self, deadline: float | None = None) -> None:
        """Stop accepting, drain the queue (bounded by ``deadline``), then reap everything."""
        deadline = self.config.shutdown_deadline if deadline is None else deadline
        self._accepting = False
        end = time.monotonic() + deadline
        while self._queue.unfinished_tasks and time.monotonic() < end:
            time.sleep(0.01)
        for _ in self._workers:
            self._queue.put(_STOP)
        for t in self._workers:
            t.join(max(0.0, end - time.monotonic()) + 1.0)
        self._workers.clear()
        self.runtime.close()


class _Handler(BaseHTTPRequestHandler):
    server: "HttpFrontend._Server"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, body, headers: dict | None = None, raw: bool = False) -> None:
        payload = (body if raw else json.dumps(body)).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        for k, v in (headers or {}).items():
            self.send_header(k, str(v))
        self.end_headers()
        self.wfile.write(payload)

    def _error(self, status: int, outcome: str, message: str) -> None:
        self._send(status, {"outcome": outcome, "error": message})

    def _body(self, limit: int):
        length = int(self.headers.get("Content-Length") or 0)
        if length > limit:
            self.rfile.read(length)
            self._error(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, "bad-request", f"body exceeds {limit} bytes")
            return None
        try:
            body = json.loads(self.rfile.read(length) or b"null")
        except ValueError as exc:
            self._error(HTTPStatus.BAD_REQUEST, "bad-request", f"malformed JSON: {exc}")
            return None
        if not isinstance(body, dict):
            self._error(HTTPStatus.BAD_REQUEST, "bad-request", "body must be a JSON object")
            return None
        return body

    def do_GET(self):
        gw = self.server.gateway
        if self.path == "/metrics":
            self._send(200, gw.metrics())
        elif self.path == "/functions":
            self._send(200, gw.functions())
        else:
            self._error(404, "not-found", f"no route {self.path}")

    def do_POST(self):
        route = {
            "/register": self._register,
            "/invoke": self._invoke,
            "/deregister": self._deregister,
        }.get(self.path)
        if route is None:
            length = int(self.headers.get("Content-Length") or 0)
            self.rfile.read(length)
            self._error(404, "not-found", f"no route {self.path}")
            return
        route()

    def _register(self):
        body = self._body(MAX_REGISTER_BODY)
        if body is None:
            return
        types = {"code": str, "fid": str, "fep": str, "mem": int, "language": str}
        for name, kind in types.items():
            value = body.get(name)
            if value is None or not isinstance(value, kind) or isinstance(value, bool):
                self._error(400, "bad-request", f"missing or invalid field {name!r}")
                return
        try:
            code = base64.b64decode(body["code"], validate=True)
        except (binascii.Error, ValueError):
            self._error(400, "bad-request", "code must be base64")
            return
        ok = self.server.gateway.register(code, body["fid"], body["fep"], body["mem"], body["language"])
        self._send(200, ok)

    def _deregister(self):
        body = self._body(MAX_INVOKE_BODY)
        if body is None:
            return
        if not isinstance(body.get("fid"), str):
            self._error(400, "bad-request", "missing or invalid field 'fid'")
            return
        self._send(200, self.server.gateway.deregister(body["fid"]))

    def _invoke(self):
        body = self._body(MAX_INVOKE_BODY)
        if body is None:
            return
        fid, args = body.get("fid"), body.get("args", {})
        if not isinstance(fid, str) or not isinstance(args, dict):
            self._error(400, "bad-request", "expected {'fid': string, 'args': object}")
            return
        record = self.server.gateway.invoke(fid, json.dumps(args))
        headers = {
            "X-Isovisor-Outcome": record.outcome,
            "X-Isovisor-Cold": int(record.cold),
            "X-Isovisor-Latency-Ms": f"{record.latency_ms:.3f}",
        }
        if record.isolate_id is not None:
            headers["X-Isovisor-Isolate"] = record.isolate_id
        if record.context_id is not None:
            headers["X-Isovisor-Context"] = record.context_id
        if record.outcome == "ok":
            self._send(200, record.output, headers, raw=True)
        else:
            self._send(STATUS.get(record.outcome, 500), {"outcome": record.outcome, "error": record.error}, headers)


class HttpFrontend:
    """Binds the HTTP routes to a gateway. ``port=0`` picks a free port."""

    class _Server(ThreadingHTTPServer):
        daemon_threads = True
        gateway: Gateway

    def __init__(self, gateway: Gateway):
        self.gateway = gateway
        self.httpd = self._Server((gateway.config.host, gateway.config.port), _Handler)
        self.httpd.gateway = gateway
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "HttpFrontend":
        self.gateway.start()
        self._thread = threading.Thread(target=self.httpd.serve_forever, name="isovisor-http", daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()
        self.gateway.shutdown()

    def __enter__(self) -> "HttpFrontend":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()


def serve(config: GatewayConfig) -> None:
    """Run the HTTP service until SIGINT/SIGTERM, then drain and reap."""
    frontend = HttpFrontend(Gateway(config))
    log.info("isovisor listening on %s (%s)", frontend.url, asdict(config))
    stop = threading.Event()

    def _signal(signum, frame):
        stop.set()

    previous = {s: signal.signal(s, _signal) for s in (signal.SIGINT, signal.SIGTERM)}
    frontend.start()
    try:
        stop.wait()
    finally:
        for s, handler in previous.items():
            signal.signal(s, handler)
        frontend.close()
        frontend.gateway.shutdown()
