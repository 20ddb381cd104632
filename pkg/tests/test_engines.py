import hashlib
import json

import pytest

from isovisor.engines import default_engines
from isovisor.engines.prebuilt import PrebuiltEngine
from isovisor.engines.python import PythonEngine, state_size
from isovisor.engines.synthetic import SyntheticEngine, SyntheticSpec
from isovisor.errors import GuestError, OutOfMemory
from isovisor.memory import MiB, PAGE, AccountingAllocator
from isovisor.registry import FunctionDescriptor

from .conftest import synthetic


def desc(code: bytes, language: str, fep: str = "main", mem: int = 8 * MiB) -> FunctionDescriptor:
    return FunctionDescriptor(fid="f", fep=fep, code=code, mem=mem, language=language)


def run(engine, d, args="{}", budget=8 * MiB):
    program = engine.compile(d)
    ctx = engine.create_context(program, AccountingAllocator(budget))
    return engine.exec(ctx, d.fep, args), ctx


def test_default_engines_cover_three_languages():
    assert set(default_engines()) == {"synthetic", "python", "prebuilt"}


# -- synthetic -----------------------------------------------------------------

def test_synthetic_spec_rejects_unknown_and_invalid():
    for bad in (b"[]", b"not json", b'{"alloc": 1}', b'{"alloc_mb": -1}', b'{"echo": 1}', b'{"run_ms": true}'):
        with pytest.raises(GuestError):
            SyntheticSpec.parse(bad)
    assert SyntheticSpec.parse(b"{}") == SyntheticSpec()


def test_synthetic_echo_and_allocation_released():
    eng = SyntheticEngine(touch=True)
    out, ctx = run(eng, desc(synthetic(alloc_mb=2, echo=True), "synthetic"), '{"b": 2, "a": [1]}')
    assert json.loads(out) == {"b": 2, "a": [1]}
    assert ctx.allocator.total == eng.context_overhead
    assert ctx.allocator.peak == eng.context_overhead + 2 * MiB
    assert ctx.state["invocations"] == 1


def test_synthetic_over_budget_is_oom():
    eng = SyntheticEngine(touch=False)
    with pytest.raises(OutOfMemory):
        run(eng, desc(synthetic(alloc_mb=3), "synthetic"), budget=2 * MiB)


def test_synthetic_params_from_args_override():
    eng = SyntheticEngine(touch=False)
    d = desc(synthetic(alloc_mb=0, params_from_args=True), "synthetic")
    with pytest.raises(OutOfMemory):
        run(eng, d, '{"alloc_mb": 4}', budget=2 * MiB)
    out, ctx = run(eng, d, '{"alloc_mb": "junk"}', budget=2 * MiB)
    assert out == "{}"


def test_synthetic_bad_args_is_guest_error():
    with pytest.raises(GuestError):
        run(SyntheticEngine(), desc(synthetic(), "synthetic"), "{oops")


# -- python --------------------------------------------------------------------

COUNTER = b"""
import json
count = 0

def main(args):
    global count
    count += 1
    return {"count": count, "len": len(args.get("items", []))}
"""


def test_python_output_matches_plain_exec_oracle():
    # oracle: the same script run by the host interpreter with no sandbox
    namespace = {}
    exec(COUNTER.decode(), namespace)
    expected = json.dumps(namespace["main"]({"items": [1, 2, 3]}), separators=(",", ":"))
    out, _ = run(PythonEngine(), desc(COUNTER, "python"), '{"items": [1, 2, 3]}')
    assert out == expected == '{"count":1,"len":3}'


def test_python_contexts_share_program_not_state():
    eng = PythonEngine()
    program = eng.compile(desc(COUNTER, "python"))
    alloc = AccountingAllocator(8 * MiB)
    a = eng.create_context(program, alloc)
    b = eng.create_context(program, alloc)
    assert a.program.code is b.program.code
    assert [json.loads(eng.exec(a, "main", "{}"))["count"] for _ in range(3)] == [1, 2, 3]
    assert json.loads(eng.exec(b, "main", "{}"))["count"] == 1
    assert eng.compiles == 1


def test_python_is_deterministic_across_engines():
    outs = {run(PythonEngine(), desc(COUNTER, "python"), '{"items": [0]}')[0] for _ in range(5)}
    assert outs == {'{"count":1,"len":1}'}


@pytest.mark.parametrize("code", [b"", b"   \n", b"def main(:\n", b"\xff\xfe"])
def test_python_compile_errors(code):
    with pytest.raises(GuestError):
        PythonEngine().compile(desc(code, "python"))


def test_python_entry_point_not_found():
    with pytest.raises(GuestError, match="entry point"):
        run(PythonEngine(), desc(COUNTER, "python", fep="missing"))


@pytest.mark.parametrize("body", [
    b"import os\ndef main(a): return 1",
    b"def main(a): return open('/etc/passwd').read()",
    b"def main(a): return eval('1')",
])
def test_python_sandbox_blocks_host_access(body):
    with pytest.raises(GuestError):
        run(PythonEngine(), desc(body, "python"))


def test_python_guest_exception_and_bad_result():
    with pytest.raises(GuestError, match="ZeroDivisionError"):
        run(PythonEngine(), desc(b"def main(a): return 1/0", "python"))
    with pytest.raises(GuestError, match="not JSON"):
        run(PythonEngine(), desc(b"def main(a): return 'not json'", "python"))
    with pytest.raises(GuestError, match="not JSON"):
        run(PythonEngine(), desc(b"def main(a): return object()", "python"))


def test_python_state_growth_is_charged_and_can_oom():
    grow = b"big = []\ndef main(a):\n    big.extend(range(a['n']))\n    return len(big)\n"
    eng = PythonEngine()
    out, ctx = run(eng, desc(grow, "python"), '{"n": 1000}', budget=2 * MiB)
    assert out == "1000"
    assert ctx.allocator.total >= eng.context_overhead + state_size(ctx.state) > 1000 * 8
    assert ctx.allocator.total % PAGE == 0
    with pytest.raises(OutOfMemory):
        eng.exec(ctx, "main", '{"n": 200000}')


def test_python_memory_error_maps_to_oom():
    with pytest.raises(OutOfMemory):
        run(PythonEngine(), desc(b"def main(a): raise MemoryError()", "python"))


def test_state_size_skips_functions_and_modules():
    ns = {"__builtins__": {}, "json": json, "f": test_state_size_skips_functions_and_modules}
    assert state_size(ns) == 0
    assert state_size({"x": [1, 2]}) > 0


# -- prebuilt ------------------------------------------------------------------

def test_prebuilt_sha256_matches_hashlib():
    out, _ = run(PrebuiltEngine(), desc(b"std", "prebuilt", fep="sha256"), '{"data": "abc"}')
    assert json.loads(out) == {"sha256": hashlib.sha256(b"abc").hexdigest()}


def test_prebuilt_symbols_and_errors():
    eng = PrebuiltEngine()
    assert run(eng, desc(b"std", "prebuilt", fep="wordcount"), '{"text": "a b  c"}')[0] == '{"words":3}'
    assert run(eng, desc(b"std", "prebuilt", fep="noop"))[0] == "{}"
    with pytest.raises(GuestError):
        eng.compile(desc(b"nolib", "prebuilt"))
    with pytest.raises(GuestError):
        run(eng, desc(b"std", "prebuilt", fep="missing"))
    assert eng.compiles == 0


def test_prebuilt_custom_library():
    eng = PrebuiltEngine()
    eng.add("mylib", "double", lambda a: a["x"] * 2)
    assert run(eng, desc(b"mylib", "prebuilt", fep="double"), '{"x": 21}')[0] == "42"


def test_allocator_threshold_examples():
    a = AccountingAllocator(10 * MiB)
    assert a.account(6 * MiB)
    assert not a.account(6 * MiB)
    assert a.total == 6 * MiB
    b = AccountingAllocator(10 * MiB)
    assert b.account(6 * MiB) and b.account(-6 * MiB) and b.account(10 * MiB)


def test_synthetic_runs_at_least_run_ms():
    import time

    eng = SyntheticEngine(touch=True)
    start = time.monotonic()
    out, ctx = run(eng, desc(synthetic(alloc_mb=1, run_ms=10, echo=True), "synthetic"), '{"x":1}')
    assert out == '{"x":1}' and time.monotonic() - start >= 0.010
    start = time.monotonic()
    out, ctx = run(eng, desc(synthetic(alloc_mb=10, run_ms=50), "synthetic"), "{}", budget=16 * MiB)
    assert out == "{}" and time.monotonic() - start >= 0.050
    assert ctx.allocator.peak >= 10 * MiB


def test_synthetic_is_deterministic():
    eng = SyntheticEngine(touch=False)
    d = desc(synthetic(echo=True), "synthetic")
    assert len({run(eng, d, '{"k": [3, 2, 1]}')[0] for _ in range(10)}) == 1


def test_context_creation_at_budget_is_oom():
    eng = PythonEngine()
    program = eng.compile(desc(COUNTER, "python"))
    alloc = AccountingAllocator(eng.context_overhead)
    alloc.charge(PAGE)
    with pytest.raises(OutOfMemory):
        eng.create_context(program, alloc)
    assert alloc.total == PAGE
