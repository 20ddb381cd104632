from .base import CompiledProgram, GuestContext, GuestEngine
from .prebuilt import PrebuiltEngine
from .python import PythonEngine
from .synthetic import SyntheticEngine, SyntheticSpec


def default_engines(touch: bool = True) -> dict[str, GuestEngine]:
    engines = [SyntheticEngine(touch=touch), PythonEngine(), PrebuiltEngine()]
    return {e.language: e for e in engines}


__all__ = [
    "CompiledProgram", "GuestContext", "GuestEngine", "PrebuiltEngine",
    "PythonEngine", "SyntheticEngine", "SyntheticSpec", "default_engines",
]
