"""IR programs shipped with the package (benchmark apps and attack variants)."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..ir import Program, parse_program

APPS = ("wordcount", "invertedindex", "hitcount", "frequency")
ATTACKS = ("wordcount_attack1", "wordcount_attack2", "wordcount_attack_reduce")


def source(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.mr").read_text(encoding="utf-8")


def load(name: str) -> Program:
    return parse_program(source(name))


def load_program(ref: str | Path) -> Program:
    """Load ``builtin:<name>`` or a path to an ``.mr`` file."""
    ref = str(ref)
    if ref.startswith("builtin:"):
        return load(ref.split(":", 1)[1])
    return parse_program(Path(ref).read_text(encoding="utf-8"))
