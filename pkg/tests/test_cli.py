import json
import re
import signal
import subprocess
import sys
import urllib.request

import pytest

from isovisor.cli import build_gateway_config, build_parser, load_config_file, main
from isovisor.replay import parse_trace


def test_synth_trace_is_seeded(tmp_path, capsys):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    args = ["synth-trace", "--tenants", "2", "--funcs-per-tenant", "2", "--rate", "0.2", "--duration-s", "60"]
    assert main(args + ["--seed", "5", "--out", str(a)]) == 0
    assert main(args + ["--seed", "5", "--out", str(b)]) == 0
    assert main(args + ["--seed", "6", "--out", str(c)]) == 0
    assert a.read_text() == b.read_text() != c.read_text()
    assert len(parse_trace(a)) > 0


def test_replay_single_policy_writes_reports(tmp_path):
    trace = tmp_path / "t.csv"
    main(["synth-trace", "--tenants", "2", "--funcs-per-tenant", "2", "--rate", "0.2",
          "--duration-s", "60", "--out", str(trace)])
    out = tmp_path / "single"
    assert main(["replay", "--trace", str(trace), "--policy", "per-tenant", "--mode", "sim",
                 "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"summary.json", "memory_timeline.csv", "latency_cdf.csv"}
    assert json.loads((out / "summary.json").read_text())["policy"] == "per-tenant"


def test_replay_all_writes_comparison(tmp_path):
    trace = tmp_path / "t.csv"
    main(["synth-trace", "--tenants", "2", "--funcs-per-tenant", "2", "--rate", "0.2",
          "--duration-s", "60", "--out", str(trace)])
    out = tmp_path / "all"
    assert main(["replay", "--trace", str(trace), "--policy", "all", "--out", str(out)]) == 0
    for policy in ("per-invocation", "per-function", "per-tenant"):
        assert (out / policy / "summary.json").exists()
    cmp = json.loads((out / "comparison.json").read_text())
    assert set(cmp["policies"]) == {"per-invocation", "per-function", "per-tenant"}


def test_replay_global_cap_counts_rejections(tmp_path):
    trace = tmp_path / "t.csv"
    trace.write_text("t_ms,tenant_id,function_id,duration_ms,memory_mb\n0,a,f,1000,128\n10,a,f,1000,128\n")
    out = tmp_path / "o"
    assert main(["replay", "--trace", str(trace), "--policy", "per-invocation",
                 "--global-cap", "200MiB", "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["rejected"] == 1


def test_replay_parse_error_exits_nonzero_with_line(tmp_path, capsys):
    trace = tmp_path / "bad.csv"
    trace.write_text("t_ms,tenant_id,function_id,duration_ms,memory_mb\n0,a,f,10,1\n5,a,f,0,1\n")
    assert main(["replay", "--trace", str(trace), "--out", str(tmp_path / "o")]) == 1
    assert "line 3" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bench_json(tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "--iterations", "10", "--json", "--out", str(out)]) == 0
    result = json.loads(out.read_text())
    for key in ("isolate_cold_create", "warm_poll_hit", "cold_invocation", "warm_invocation"):
        assert result[key]["n"] == 10
    assert json.loads(capsys.readouterr().out) == result


def test_bench_table(capsys):
    assert main(["bench", "--iterations", "10", "--concurrent-isolates", "4"]) == 0
    assert "warm_invocation" in capsys.readouterr().out


def test_convert_trace(tmp_path):
    inv = tmp_path / "inv.csv"
    inv.write_text("HashOwner,HashApp,HashFunction,Trigger," + ",".join(map(str, range(1, 1441))) + "\n"
                   "o,a,f,http,2," + ",".join(["0"] * 1439) + "\n")
    dur = tmp_path / "dur.csv"
    dur.write_text("HashOwner,HashApp,HashFunction,Average\no,a,f,80\n")
    mem = tmp_path / "mem.csv"
    mem.write_text("HashOwner,HashApp,AverageAllocatedMb\no,a,150\n")
    out = tmp_path / "trace.csv"
    assert main(["convert-trace", "--invocations", str(inv), "--durations", str(dur), "--memory", str(mem),
                 "--seed", "3", "--out", str(out)]) == 0
    events = parse_trace(out)
    assert [(e.tenant_id, e.function_id, e.duration_ms, e.memory_mb) for e in events] == [("o", "f", 80, 150)] * 2


@pytest.mark.parametrize("argv", [
    ["serve", "--max-contexts", "0"],
    ["serve", "--memory-cap", "lots"],
    ["serve", "--workers", "0"],
    ["replay"],
    ["bench", "--iterations", "0"],
])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_serve_flags_override_config_file(tmp_path, monkeypatch):
    cfg = tmp_path / "isovisor.conf"
    cfg.write_text("# gateway\nport = 9001\nruntime_memory_cap = 1GiB\nttl-seconds = 5\nshare_code_cache = false\n")
    monkeypatch.setenv("ISOVISOR_CONFIG", str(cfg))
    config = build_gateway_config(build_parser().parse_args(["serve", "--ttl", "10"]))
    assert (config.port, config.runtime_memory_cap, config.ttl_seconds, config.share_code_cache) == \
        (9001, 1 << 30, 10.0, False)
    config = build_gateway_config(build_parser().parse_args(["serve", "--memory-cap", "2GiB", "--port", "8080"]))
    assert (config.port, config.runtime_memory_cap) == (8080, 2 << 30)


def test_serve_flags_reach_runtime(monkeypatch):
    monkeypatch.delenv("ISOVISOR_CONFIG", raising=False)
    config = build_gateway_config(build_parser().parse_args(
        ["serve", "--port", "8080", "--memory-cap", "2GiB", "--ttl", "10", "--no-share-code-cache"]))
    rt = config.build_runtime()
    assert (config.port, rt.ledger.cap, rt.ttl, rt.share_code_cache) == (8080, 2 << 30, 10.0, False)


def test_bench_with_128_live_isolates(capsys):
    assert main(["bench", "--iterations", "10", "--concurrent-isolates", "128", "--json"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["concurrent_isolates"] == 128 and result["isolate_cold_create"]["n"] == 10


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("colour = blue\n")
    with pytest.raises(ValueError, match="unknown key"):
        load_config_file(bad)
    bad.write_text("just words\n")
    with pytest.raises(ValueError, match="key=value"):
        load_config_file(bad)


def test_serve_process_end_to_end():
    proc = subprocess.Popen(
        [sys.executable, "-m", "isovisor", "serve", "--port", "0", "--memory-cap", "256MiB"],
        stderr=subprocess.PIPE, text=True,
    )
    try:
        url = None
        for line in proc.stderr:
            m = re.search(r"listening on (http://\S+)", line)
            if m:
                url = m.group(1)
                break
        assert url
        with urllib.request.urlopen(url + "/metrics", timeout=5) as resp:
            assert json.loads(resp.read())["memory_cap_bytes"] == 256 << 20
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=20) == 0
    finally:
        proc.kill()
        proc.stderr.close()
