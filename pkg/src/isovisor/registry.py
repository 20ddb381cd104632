"""In-memory function cache: the store behind register/deregister/invoke."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable

log = logging.getLogger(__name__)

MAX_CODE_BYTES = 16 << 20


@dataclass(frozen=True, eq=False)
class FunctionDescriptor:
    fid: str
    fep: str
    code: bytes = field(repr=False)
    mem: int
    language: str

    def summary(self) -> dict:
        return {
            "fid": self.fid,
            "fep": self.fep,
            "mem": self.mem,
            "language": self.language,
            "code_bytes": len(self.code),
        }


class FunctionCache:
    """Thread-safe map of fid to descriptor.

    Registration never overwrites: a duplicate fid is refused and the
    existing descriptor stays in place. ``languages`` is the set of installed
    engine tags a descriptor may name.
    """

    def __init__(self, languages: Iterable[str]):
        self.languages = frozenset(languages)
        self._functions: dict[str, FunctionDescriptor] = {}
        self._lock = threading.Lock()
        self.registrations = 0
        self._on_deregister: list[Callable[[FunctionDescriptor], None]] = []

    def on_deregister(self, callback: Callable[[FunctionDescriptor], None]) -> None:
        self._on_deregister.append(callback)

    def _valid(self, code, fid, fep, mem, language) -> bool:
        if not isinstance(fid, str) or not fid:
            return False
        if not isinstance(fep, str) or not fep:
            return False
        if not isinstance(code, (bytes, bytearray)) or not 0 < len(code) <= MAX_CODE_BYTES:
            return False
        if isinstance(mem, bool) or not isinstance(mem, int) or mem <= 0:
            return False
        return language in self.languages

    def register(self, code: bytes, fid: str, fep: str, mem: int, language: str) -> bool:
        if not self._valid(code, fid, fep, mem, language):
            return False
        desc = FunctionDescriptor(fid=fid, fep=fep, code=bytes(code), mem=mem, language=language)
        with self._lock:
            if fid in self._functions:
                return False
            self._functions[fid] = desc
            self.registrations += 1
        log.debug("registered %s (%s, %d bytes budget)", fid, language, mem)
        return True

    def deregister(self, fid: str) -> bool:
        with self._lock:
            desc = self._functions.pop(fid, None)
        if desc is None:
            return False
        for callback in self._on_deregister:
            callback(desc)
        return True

    def lookup(self, fid: str) -> FunctionDescriptor | None:
        with self._lock:
            return self._functions.get(fid)

    def __len__(self) -> int:
        with self._lock:
            return len(self._functions)

    def __contains__(self, fid: str) -> bool:
        return self.lookup(fid) is not None

    def list(self) -> list[FunctionDescriptor]:
        with self._lock:
            return list(self._functions.values())
