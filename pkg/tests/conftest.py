from __future__ import annotations

import base64
import json
import threading
import urllib.error
import urllib.request

import pytest

from isovisor import Gateway, GatewayConfig, HttpFrontend, Isovisor


class FakeClock:
    def __init__(self, start: float = 1000.0):
        self.now = start
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            return self.now

    def advance(self, seconds: float) -> None:
        with self._lock:
            self.now += seconds


def synthetic(**spec) -> bytes:
    return json.dumps(spec).encode()


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def runtime():
    rt = Isovisor(memory_cap=512 << 20, touch_memory=False)
    yield rt
    rt.close()


class Client:
    """Minimal JSON-over-HTTP client for the gateway routes."""

    def __init__(self, url: str):
        self.url = url

    def request(self, method: str, path: str, body=None):
        data = None if body is None else json.dumps(body).encode()
        req = urllib.request.Request(self.url + path, data=data, method=method,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=30) as resp:
                return resp.status, json.loads(resp.read()), dict(resp.headers)
        except urllib.error.HTTPError as err:
            return err.code, json.loads(err.read()), dict(err.headers)

    def register(self, code: bytes, fid: str, fep: str = "main", mem: int = 16 << 20,
                 language: str = "synthetic"):
        return self.request("POST", "/register", {
            "code": base64.b64encode(code).decode(), "fid": fid, "fep": fep,
            "mem": mem, "language": language,
        })

    def invoke(self, fid: str, args=None):
        return self.request("POST", "/invoke", {"fid": fid, "args": args or {}})

    def deregister(self, fid: str):
        return self.request("POST", "/deregister", {"fid": fid})

    def get(self, path: str):
        return self.request("GET", path)


@pytest.fixture
def serve_gateway():
    """Factory starting a gateway plus HTTP frontend on a free port."""
    opened = []

    def start(**overrides) -> tuple[Gateway, Client]:
        config = GatewayConfig(port=0, **{"touch_memory": False, **overrides})
        gw = Gateway(config).start()
        front = HttpFrontend(gw).start()
        opened.append((gw, front))
        return gw, Client(front.url)

    yield start
    for gw, front in opened:
        front.close()
        gw.shutdown(deadline=5)


# -- acceptance summary --------------------------------------------------------

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    if rep.when == "call":
        entry["details"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        detail = f" ({'; '.join(entry['details'])})" if entry["details"] else ""
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status} {entry['title']}{detail}")
