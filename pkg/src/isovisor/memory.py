"""Memory accounting: per-isolate allocators and the runtime-wide ledger."""

from __future__ import annotations

import mmap
import threading

from .errors import GlobalMemoryExhausted, OutOfMemory

PAGE = 4096
MiB = 1 << 20
GiB = 1 << 30


def page_round(nbytes: int) -> int:
    """Round a byte count up to whole pages (sign preserved)."""
    if nbytes >= 0:
        return -(-nbytes // PAGE) * PAGE
    return -page_round(-nbytes)


class AccountingAllocator:
    """Charges guest allocations against a fixed budget.

    Deltas are accounted in whole pages. A positive delta that would push the
    total past the budget is rejected and leaves the total untouched; frees
    never fail and never drive the total below zero.
    """

    def __init__(self, budget: int):
        if budget <= 0:
            raise ValueError("budget must be positive")
        self.budget = budget
        self.total = 0
        self.peak = 0
        self._lock = threading.Lock()

    def account(self, delta: int) -> bool:
        delta = page_round(delta)
        with self._lock:
            if delta > 0 and self.total + delta > self.budget:
                return False
            self.total = max(0, self.total + delta)
            self.peak = max(self.peak, self.total)
            return True

    def charge(self, nbytes: int) -> None:
        if not self.account(nbytes):
            raise OutOfMemory(
                f"allocation of {page_round(nbytes)} bytes exceeds budget "
                f"({self.total}/{self.budget} in use)"
            )

    def release(self, nbytes: int) -> None:
        self.account(-abs(nbytes))

    @property
    def headroom(self) -> int:
        return self.budget - self.total


class Arena:
    """An anonymous mapping standing in for a guest heap region.

    ``touch`` writes one byte per page so the kernel actually backs the
    region; closing the arena unmaps it and returns the pages to the OS.
    """

    def __init__(self, size: int, touch: bool = True):
        self.size = size
        self._map = mmap.mmap(-1, size) if size > 0 else None
        if touch and self._map is not None:
            self._map[::PAGE] = b"\x01" * len(range(0, size, PAGE))

    def close(self) -> None:
        if self._map is not None:
            self._map.close()
            self._map = None

    @property
    def closed(self) -> bool:
        return self._map is None


class MemoryLedger:
    """Runtime-wide reservation of isolate budgets against a hard cap."""

    def __init__(self, cap: int):
        self.cap = cap
        self.reserved = 0
        self._cond = threading.Condition()

    def reserve(self, nbytes: int) -> None:
        with self._cond:
            if self.reserved + nbytes > self.cap:
                raise GlobalMemoryExhausted(
                    f"cannot reserve {nbytes} bytes: {self.reserved}/{self.cap} reserved"
                )
            self.reserved += nbytes

    def try_reserve(self, nbytes: int) -> bool:
        try:
            self.reserve(nbytes)
        except GlobalMemoryExhausted:
            return False
        return True

    def release(self, nbytes: int) -> None:
        with self._cond:
            self.reserved = max(0, self.reserved - nbytes)
            self._cond.notify_all()

    def wait_for(self, nbytes: int, timeout: float) -> bool:
        """Block until ``nbytes`` could fit under the cap, or the timeout passes."""
        with self._cond:
            return self._cond.wait_for(lambda: self.reserved + nbytes <= self.cap, timeout)
