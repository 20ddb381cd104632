import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isovisor.errors import GlobalMemoryExhausted, OutOfMemory
from isovisor.memory import PAGE, AccountingAllocator, Arena, MemoryLedger, page_round
from isovisor.units import parse_size


@pytest.mark.parametrize("n,expected", [(0, 0), (1, PAGE), (PAGE, PAGE), (PAGE + 1, 2 * PAGE), (-1, -PAGE)])
def test_page_round(n, expected):
    assert page_round(n) == expected


def test_charge_within_budget_and_reject_over():
    a = AccountingAllocator(10 * PAGE)
    a.charge(3 * PAGE)
    assert a.total == 3 * PAGE
    with pytest.raises(OutOfMemory):
        a.charge(8 * PAGE)
    assert a.total == 3 * PAGE
    a.release(3 * PAGE)
    assert a.total == 0 and a.peak == 3 * PAGE


def test_release_clamps_at_zero():
    a = AccountingAllocator(PAGE)
    a.release(5 * PAGE)
    assert a.total == 0


def test_zero_budget_rejected():
    with pytest.raises(ValueError):
        AccountingAllocator(0)


@settings(max_examples=300, deadline=None)
@given(budget_pages=st.integers(1, 64),
       deltas=st.lists(st.integers(-20 * PAGE, 20 * PAGE), max_size=60))
def test_allocator_matches_reference_model(budget_pages, deltas):
    # reference: a plain integer page counter with the same accept rule
    budget = budget_pages * PAGE
    a = AccountingAllocator(budget)
    pages = 0
    for d in deltas:
        p = -(-abs(d) // PAGE) * (1 if d >= 0 else -1)
        accepted = a.account(d)
        if p > 0 and (pages + p) * PAGE > budget:
            assert not accepted
        else:
            assert accepted
            pages = max(0, pages + p)
        assert a.total == pages * PAGE
        assert 0 <= a.total <= budget


def test_arena_touch_and_close():
    arena = Arena(8 * PAGE, touch=True)
    assert not arena.closed
    arena.close()
    arena.close()
    assert arena.closed
    assert Arena(0).closed


def test_ledger_reserve_and_release():
    led = MemoryLedger(100)
    led.reserve(60)
    assert not led.try_reserve(50)
    with pytest.raises(GlobalMemoryExhausted):
        led.reserve(41)
    led.release(60)
    assert led.reserved == 0
    led.release(10)
    assert led.reserved == 0


def test_ledger_wait_for_wakes_on_release():
    led = MemoryLedger(100)
    led.reserve(100)
    threading.Timer(0.05, led.release, args=(50,)).start()
    assert led.wait_for(50, timeout=2.0)
    assert not led.wait_for(80, timeout=0.01)


@pytest.mark.parametrize("text,expected", [
    ("123", 123), ("4KiB", 4096), ("2GiB", 2 << 30), ("512M", 512 << 20),
    ("1MB", 1_000_000), ("1.5 GiB", 3 << 29), ("16g", 16 << 30), ("7b", 7),
])
def test_parse_size(text, expected):
    assert parse_size(text) == expected


@pytest.mark.parametrize("text", ["", "abc", "-1", "5XB"])
def test_parse_size_rejects(text):
    with pytest.raises(ValueError):
        parse_size(text)
