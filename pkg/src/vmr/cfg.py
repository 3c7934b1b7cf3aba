"""Static control-flow graphs over basic blocks and trace validity checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .ir import FunctionDef


@dataclass(frozen=True)
class Cfg:
    nodes: frozenset[int]
    edges: frozenset[tuple[int, int]]
    entry: int
    emit_blocks: frozenset[int]
    ret_blocks: frozenset[int]

    def successors(self, b: int) -> list[int]:
        return sorted(t for s, t in self.edges if s == b)


@dataclass(frozen=True)
class CftCheck:
    """Result of :func:`check_cft`; ``bad_position`` is None when valid."""

    bad_position: int | None = None
    reason: str = ""

    @property
    def valid(self) -> bool:
        return self.bad_position is None

    def __bool__(self) -> bool:
        return self.valid


VALID = CftCheck()


def build_cfg(f: FunctionDef) -> Cfg:
    edges = set()
    emit, ret = set(), set()
    for b in f.blocks:
        for t in b.terminator.targets():
            edges.add((b.index, t))
        if b.terminator.op == "ret":
            ret.add(b.index)
        if any(ins.op == "emit" for ins in b.body):
            emit.add(b.index)
    return Cfg(
        nodes=frozenset(b.index for b in f.blocks),
        edges=frozenset(edges),
        entry=1,
        emit_blocks=frozenset(emit),
        ret_blocks=frozenset(ret),
    )


def check_cft(g: Cfg, t: Sequence[int], complete: bool = True) -> CftCheck:
    """Check a control-flow trace against the static edge relation.

    The reported position is the trace index the bad step leaves from: a bad
    step ``t[i] -> t[i+1]`` reports ``i``; a bad first step out of the entry
    reports 0.  When *complete* is set the last block entered must end in
    ``ret`` (failure reports the last index, 0 for an empty trace); faulting
    instances pass ``complete=False`` because they stop mid-block.
    """
    prev = g.entry
    for i, b in enumerate(t):
        if (prev, b) not in g.edges:
            return CftCheck(max(i - 1, 0), f"edge ({prev},{b}) not in CFG")
        prev = b
    if complete and prev not in g.ret_blocks:
        return CftCheck(max(len(t) - 1, 0), f"bb{prev} does not end in ret")
    return VALID


def contributes_output(g: Cfg, t: Sequence[int]) -> bool:
    return g.entry in g.emit_blocks or any(b in g.emit_blocks for b in t)


def reachable(g: Cfg) -> set[int]:
    seen = {g.entry}
    stack = [g.entry]
    while stack:
        b = stack.pop()
        for s in g.successors(b):
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


def unreachable_blocks(f: FunctionDef) -> list[int]:
    """Blocks never reachable from the entry (a warning, not an error)."""
    g = build_cfg(f)
    return sorted(g.nodes - reachable(g))


def to_dot(g: Cfg, name: str = "cfg") -> str:
    lines = [f"digraph {name} {{"]
    for n in sorted(g.nodes):
        shape = "doublecircle" if n in g.emit_blocks else "circle"
        lines.append(f'  bb{n} [shape={shape}, label="bb{n}"];')
    for s, t in sorted(g.edges):
        lines.append(f"  bb{s} -> bb{t};")
    lines.append("}")
    return "\n".join(lines) + "\n"
