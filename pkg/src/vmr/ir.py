"""MiniMR IR: a small register machine for user map/reduce functions.

A program is a pair of functions (``map``, ``reduce``); each function is a
list of basic blocks numbered from 1 in text order.  Block 1 is the entry.

Text format::

    program wordcount
    fn map
    bb1:
      tokenize r2, r1, " "
      jmp bb2
    ...

Entry conventions: for ``map`` r0 holds the record key and r1 the record
value; for ``reduce`` r0 holds the key and r1 a cursor over the values.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1

MAP = "MAP"
REDUCE = "REDUCE"


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokCursor:
    """Forward cursor over the tokens of a string."""

    tokens: tuple[str, ...]
    pos: int = 0


@dataclass(frozen=True)
class ValCursor:
    """Forward cursor over a reduce instance's value sequence."""

    values: tuple
    pos: int = 0


def is_scalar(v) -> bool:
    return isinstance(v, (bool, int, str))


def vkey(v) -> tuple:
    """Typed key for a scalar: usable for hashing, equality and ordering.

    Python treats ``True == 1``; the IR does not, so every comparison of
    values outside the interpreter goes through this key.  Ordering is
    type-then-value with bool < int < str.
    """
    if isinstance(v, bool):
        return (0, v)
    if isinstance(v, int):
        return (1, v)
    if isinstance(v, str):
        return (2, v)
    if isinstance(v, TokCursor):
        return (3, v.tokens, v.pos)
    if isinstance(v, ValCursor):
        return (4, tuple(vkey(x) for x in v.values), v.pos)
    raise TypeError(f"not an IR value: {v!r}")


def outputs_key(outputs: Iterable[tuple]) -> tuple:
    return tuple((vkey(k), vkey(v)) for k, v in outputs)


# ---------------------------------------------------------------------------
# Instructions
# ---------------------------------------------------------------------------

# operand kinds: R register, L literal, S string literal, B block label
SIGNATURES: dict[str, str] = {
    "const": "RL",
    "mov": "RR",
    "add": "RRR",
    "sub": "RRR",
    "mul": "RRR",
    "div": "RRR",
    "concat": "RRR",
    "len": "RR",
    "lower": "RR",
    "clear": "R",
    "tokenize": "RRS",
    "hasnext": "RR",
    "next": "RR",
    "vhasnext": "RR",
    "vnext": "RR",
    "cmpeq": "RRR",
    "cmpgt": "RRR",
    "cmpge": "RRR",
    "emit": "RR",
    "jmp": "B",
    "br": "RBB",
    "ret": "",
}

TERMINATORS = frozenset({"jmp", "br", "ret"})
# opcodes that update a cursor register in place (besides writing d)
CURSOR_ADVANCE = frozenset({"next", "vnext"})


class Instruction:
    """One IR instruction: an opcode and its operand tuple.

    Registers and labels are plain ints; literals are the value itself.
    Equality is type-aware so ``const r1, 1`` differs from ``const r1, true``.
    """

    __slots__ = ("op", "args")

    def __init__(self, op: str, *args):
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "args", tuple(args))

    def __setattr__(self, name, value):
        raise AttributeError("Instruction is immutable")

    def _key(self):
        return (self.op, tuple((type(a).__name__, a) for a in self.args))

    def __eq__(self, other):
        return isinstance(other, Instruction) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return f"Instruction({format_instruction(self)!r})"

    @property
    def is_terminator(self) -> bool:
        return self.op in TERMINATORS

    def uses(self) -> tuple[int, ...]:
        """Registers read."""
        sig = SIGNATURES[self.op]
        if self.op == "emit":
            return self.args
        if self.op == "br":
            return (self.args[0],)
        return tuple(a for a, k in zip(self.args[1:], sig[1:]) if k == "R")

    def defs(self) -> tuple[int, ...]:
        """Registers written."""
        if self.op in TERMINATORS or self.op == "emit":
            return ()
        if self.op in CURSOR_ADVANCE:
            return (self.args[0], self.args[1])
        return (self.args[0],)

    def targets(self) -> tuple[int, ...]:
        if self.op == "jmp":
            return (self.args[0],)
        if self.op == "br":
            return (self.args[1], self.args[2])
        return ()


@dataclass(frozen=True)
class BasicBlock:
    index: int
    body: tuple[Instruction, ...]
    terminator: Instruction | None

    def instructions(self) -> tuple[Instruction, ...]:
        if self.terminator is None:
            return self.body
        return self.body + (self.terminator,)


@dataclass(frozen=True)
class FunctionDef:
    kind: str
    blocks: tuple[BasicBlock, ...]
    register_count: int = field(default=-1)

    def __post_init__(self):
        if self.register_count < 0:
            object.__setattr__(self, "register_count", _count_registers(self.kind, self.blocks))

    def block(self, index: int) -> BasicBlock:
        return self.blocks[index - 1]

    def sites(self):
        """Yield ``((block, offset), instruction)`` for every instruction."""
        for b in self.blocks:
            for i, ins in enumerate(b.instructions()):
                yield (b.index, i), ins

    def instruction_count(self) -> int:
        return sum(len(b.instructions()) for b in self.blocks)


@dataclass(frozen=True)
class Program:
    name: str
    map_fn: FunctionDef
    reduce_fn: FunctionDef

    def function(self, kind: str) -> FunctionDef:
        return self.map_fn if kind == MAP else self.reduce_fn


def _count_registers(kind, blocks) -> int:
    top = 1
    for b in blocks:
        for ins in b.instructions():
            for r in ins.uses() + ins.defs():
                top = max(top, r)
    return top + 1


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class IRSyntaxError(SyntaxError):
    """Malformed IR text; carries 1-based line and column."""

    def __init__(self, msg: str, line: int, column: int = 1):
        super().__init__(f"{line}:{column}: {msg}")
        self.line = line
        self.column = column


class ValidationError(ValueError):
    def __init__(self, diagnostics: Sequence[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""\s*(?:
        (?P<str>"(?:[^"\\]|\\.)*")
      | (?P<reg>r\d+)\b
      | (?P<label>bb\d+)\b
      | (?P<int>-?\d+)\b
      | (?P<bool>true|false)\b
      | (?P<comma>,)
      | (?P<bad>\S+)
    )""",
    re.VERBOSE,
)


def _strip_comment(line: str) -> str:
    in_str = False
    escaped = False
    for i, ch in enumerate(line):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            return line[:i]
    return line


def _parse_operands(text: str, lineno: int, col0: int) -> list[tuple[str, object, int]]:
    out = []
    pos = 0
    expect_operand = True
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        col = col0 + m.start(m.lastgroup)
        kind = m.lastgroup
        tok = m.group(kind)
        pos = m.end()
        if kind == "comma":
            if expect_operand:
                raise IRSyntaxError("unexpected ','", lineno, col)
            expect_operand = True
            continue
        if not expect_operand:
            raise IRSyntaxError(f"expected ',' before {tok!r}", lineno, col)
        if kind == "bad":
            raise IRSyntaxError(f"bad operand {tok!r}", lineno, col)
        if kind == "str":
            try:
                val = json.loads(tok)
            except json.JSONDecodeError:
                raise IRSyntaxError(f"bad string literal {tok}", lineno, col) from None
        elif kind == "reg":
            val = int(tok[1:])
        elif kind == "label":
            val = int(tok[2:])
        elif kind == "int":
            val = int(tok)
            if not INT_MIN <= val <= INT_MAX:
                raise IRSyntaxError("integer literal out of range", lineno, col)
        else:
            val = tok == "true"
        out.append((kind, val, col))
        expect_operand = False
    if out and expect_operand:
        raise IRSyntaxError("trailing ','", lineno, col0 + len(text))
    return out


def _parse_instruction(line: str, lineno: int, indent: int) -> Instruction:
    m = re.match(r"([A-Za-z]+)", line)
    if not m:
        raise IRSyntaxError(f"expected opcode, got {line!r}", lineno, indent + 1)
    op = m.group(1).lower()
    if op not in SIGNATURES:
        raise IRSyntaxError(f"unknown opcode {m.group(1)!r}", lineno, indent + 1)
    sig = SIGNATURES[op]
    operands = _parse_operands(line[m.end():], lineno, indent + m.end() + 1)
    if len(operands) != len(sig):
        raise IRSyntaxError(
            f"{op} takes {len(sig)} operand(s), got {len(operands)}", lineno, indent + 1
        )
    args = []
    for want, (kind, val, col) in zip(sig, operands):
        ok = {
            "R": kind == "reg",
            "B": kind == "label",
            "S": kind == "str",
            "L": kind in ("str", "int", "bool"),
        }[want]
        if not ok:
            raise IRSyntaxError(f"{op}: operand kind mismatch ({kind})", lineno, col)
        args.append(val)
    return Instruction(op, *args)


def _make_block(index: int, instrs: list[Instruction]) -> BasicBlock:
    if instrs and instrs[-1].is_terminator:
        return BasicBlock(index, tuple(instrs[:-1]), instrs[-1])
    return BasicBlock(index, tuple(instrs), None)


def parse_unchecked(text: str) -> Program:
    """Parse IR text into a Program without running the validator."""
    name = None
    fns: dict[str, list[BasicBlock]] = {}
    cur_fn: str | None = None
    cur_block: int | None = None
    cur_instrs: list[Instruction] = []
    last_line = 0

    def close_block():
        if cur_fn is not None and cur_block is not None:
            fns[cur_fn].append(_make_block(cur_block, cur_instrs))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        last_line = lineno
        line = _strip_comment(raw).rstrip()
        stripped = line.lstrip()
        if not stripped:
            continue
        indent = len(line) - len(stripped)
        head = stripped.split()
        if head[0] == "program":
            if name is not None or len(head) != 2:
                raise IRSyntaxError("bad program header", lineno, indent + 1)
            name = head[1]
            continue
        if head[0] == "fn":
            if len(head) != 2 or head[1] not in ("map", "reduce"):
                raise IRSyntaxError("expected 'fn map' or 'fn reduce'", lineno, indent + 1)
            close_block()
            kind = head[1].upper()
            if kind in fns:
                raise IRSyntaxError(f"duplicate fn {head[1]}", lineno, indent + 1)
            fns[kind] = []
            cur_fn, cur_block, cur_instrs = kind, None, []
            continue
        m = re.fullmatch(r"bb(\d+):", stripped)
        if m:
            if cur_fn is None:
                raise IRSyntaxError("block outside fn", lineno, indent + 1)
            close_block()
            idx = int(m.group(1))
            if idx != len(fns[cur_fn]) + 1:
                raise IRSyntaxError(
                    f"expected bb{len(fns[cur_fn]) + 1}, got bb{idx}", lineno, indent + 1
                )
            cur_block, cur_instrs = idx, []
            continue
        if cur_block is None:
            raise IRSyntaxError("instruction outside block", lineno, indent + 1)
        cur_instrs.append(_parse_instruction(stripped, lineno, indent))
    close_block()

    if name is None:
        raise IRSyntaxError("missing 'program <name>' header", max(last_line, 1))
    for kind in (MAP, REDUCE):
        if kind not in fns:
            raise IRSyntaxError(f"missing fn {kind.lower()}", max(last_line, 1))
        if not fns[kind]:
            raise IRSyntaxError(f"fn {kind.lower()} has no blocks", max(last_line, 1))
    return Program(name, FunctionDef(MAP, tuple(fns[MAP])), FunctionDef(REDUCE, tuple(fns[REDUCE])))


def parse_program(text: str) -> Program:
    """Parse and validate.  Raises IRSyntaxError or ValidationError."""
    p = parse_unchecked(text)
    diags = validate(p)
    if diags:
        raise ValidationError(diags)
    return p


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_function(f: FunctionDef) -> list[str]:
    diags: list[str] = []
    n = len(f.blocks)
    if n == 0:
        return [f"{f.kind}: no blocks"]
    structural_ok = True
    for pos, b in enumerate(f.blocks, start=1):
        tag = f"BB{b.index}"
        if b.index != pos:
            diags.append(f"{tag}: index out of order (expected {pos})")
            structural_ok = False
        for i, ins in enumerate(b.body):
            if ins.is_terminator:
                diags.append(f"{tag}: terminator not in final position")
                structural_ok = False
                break
        if b.terminator is None:
            diags.append(f"{tag}: missing terminator")
            structural_ok = False
        for i, ins in enumerate(b.instructions()):
            if ins.op not in SIGNATURES or len(ins.args) != len(SIGNATURES[ins.op]):
                diags.append(f"{tag}[{i}]: malformed {ins.op}")
                structural_ok = False
                continue
            for t in ins.targets():
                if not 1 <= t <= n:
                    diags.append(f"{tag}[{i}]: unknown target bb{t}")
                    structural_ok = False
            for r in ins.uses() + ins.defs():
                if not isinstance(r, int) or isinstance(r, bool) or r < 0:
                    diags.append(f"{tag}[{i}]: bad register {r!r}")
                    structural_ok = False
            if ins.op == "tokenize" and not isinstance(ins.args[2], str):
                diags.append(f"{tag}[{i}]: tokenize delimiter must be a string")
    if not structural_ok:
        return diags
    diags.extend(_check_definedness(f))
    return diags


def _check_definedness(f: FunctionDef) -> list[str]:
    """Must-be-written dataflow: every read has a write on every path."""
    universe = frozenset(range(f.register_count))
    preds: dict[int, list[int]] = {b.index: [] for b in f.blocks}
    for b in f.blocks:
        for t in b.terminator.targets():
            preds[t].append(b.index)
    entry_in = frozenset({0, 1})
    out: dict[int, frozenset] = {b.index: universe for b in f.blocks}
    ins_: dict[int, frozenset] = {b.index: universe for b in f.blocks}
    changed = True
    while changed:
        changed = False
        for b in f.blocks:
            if b.index == 1:
                cur = entry_in
                for p in preds[1]:
                    cur = cur & out[p]
            else:
                cur = universe
                for p in preds[b.index]:
                    cur = cur & out[p]
            ins_[b.index] = cur
            defined = set(cur)
            for ins in b.instructions():
                defined.update(ins.defs())
            new_out = frozenset(defined)
            if new_out != out[b.index]:
                out[b.index] = new_out
                changed = True
    diags = []
    for b in f.blocks:
        defined = set(ins_[b.index])
        for i, ins in enumerate(b.instructions()):
            for r in ins.uses():
                if r not in defined:
                    diags.append(f"BB{b.index}[{i}]: r{r} possibly unwritten")
            defined.update(ins.defs())
    return diags


def validate(p: Program) -> list[str]:
    """Return diagnostics for *p*; an empty list means the program is valid."""
    # map diagnostics are reported bare; reduce ones carry the function name
    diags = validate_function(p.map_fn)
    diags.extend(f"reduce {d}" for d in validate_function(p.reduce_fn))
    return diags


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def format_literal(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return json.dumps(v, ensure_ascii=False)


def format_instruction(ins: Instruction) -> str:
    sig = SIGNATURES.get(ins.op, "")
    parts = []
    for kind, a in zip(sig, ins.args):
        if kind == "R":
            parts.append(f"r{a}")
        elif kind == "B":
            parts.append(f"bb{a}")
        else:
            parts.append(format_literal(a))
    return ins.op + (" " + ", ".join(parts) if parts else "")


def serialize_function(f: FunctionDef) -> str:
    lines = [f"fn {f.kind.lower()}"]
    for b in f.blocks:
        lines.append(f"bb{b.index}:")
        lines.extend("  " + format_instruction(ins) for ins in b.instructions())
    return "\n".join(lines) + "\n"


def serialize(p: Program) -> str:
    return f"program {p.name}\n" + serialize_function(p.map_fn) + serialize_function(p.reduce_fn)
