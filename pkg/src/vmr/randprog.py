"""Random generator of small, validator-clean MiniMR programs.

Used by the property tests.  Programs are built from structured pieces
(straight-line code, if/else, loops over a tokenizer or over the reduce
value cursor) so every register read is defined on all paths and every
loop is bounded by the length of its input.  Register types are tracked,
so the only runtime faults a generated program can hit are division by
zero and integer overflow.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .ir import MAP, REDUCE, BasicBlock, FunctionDef, Instruction, Program
from .runtime import InstanceInput

MAX_BLOCKS = 8
MAX_REGISTERS = 16

_INTS = (-2, -1, 0, 1, 2, 3, 7)
_STRS = ("", "a", "b", "x y", ",", "A")
_WORDS = ("a", "b", "B", "cc", "a,b")
_DELIMS = (" ", ",", " ,")


@dataclass(frozen=True)
class GeneratedProgram:
    program: Program
    reduce_value_type: str  # "int" or "str"


class _FnGen:
    def __init__(self, rng: random.Random, kind: str, value_type: str, max_blocks: int, max_regs: int):
        self.rng = rng
        self.kind = kind
        self.max_blocks = max_blocks
        self.max_regs = max_regs
        self.blocks: list[list] = []  # [body, terminator]
        self.next_reg = 2
        self.protected: set[int] = set()
        self.value_type = value_type
        if kind == MAP:
            self.env = {0: "int", 1: "str"}
        else:
            self.env = {0: "str", 1: "vit"}
            self.protected.add(1)

    # -- registers ---------------------------------------------------------

    def regs_of(self, typ: str) -> list[int]:
        return sorted(r for r, t in self.env.items() if t == typ)

    def dest(self, typ: str) -> int | None:
        if self.next_reg < self.max_regs:
            r = self.next_reg
            self.next_reg += 1
            return r
        pool = [r for r in self.regs_of(typ) if r not in self.protected]
        return self.rng.choice(pool) if pool else None

    def define(self, r: int, typ: str) -> None:
        self.env[r] = typ

    # -- blocks ------------------------------------------------------------

    def new_block(self) -> int | None:
        if len(self.blocks) >= self.max_blocks:
            return None
        self.blocks.append([[], None])
        return len(self.blocks)

    def room(self, n: int) -> bool:
        return len(self.blocks) + n <= self.max_blocks

    def emit(self, b: int, ins: Instruction) -> None:
        self.blocks[b - 1][0].append(ins)

    def terminate(self, b: int, ins: Instruction) -> None:
        self.blocks[b - 1][1] = ins

    # -- straight-line code ------------------------------------------------

    def scalar_types(self) -> list[str]:
        return [t for t in ("int", "str", "bool") if self.regs_of(t)]

    def pick(self, typ: str) -> int:
        return self.rng.choice(self.regs_of(typ))

    def stmt(self, b: int) -> None:
        rng = self.rng
        choice = rng.choice(
            ["const_i", "const_s", "arith", "arith", "concat", "len", "lower", "mov", "cmp", "clear", "emit", "div"]
        )
        if choice == "const_i":
            self._def(b, "int", lambda d: Instruction("const", d, rng.choice(_INTS)))
        elif choice == "const_s":
            self._def(b, "str", lambda d: Instruction("const", d, rng.choice(_STRS)))
        elif choice == "arith" and self.regs_of("int"):
            op = rng.choice(("add", "sub", "mul"))
            self._def(b, "int", lambda d: Instruction(op, d, self.pick("int"), self.pick("int")))
        elif choice == "div" and self.regs_of("int") and rng.random() < 0.3:
            self._def(b, "int", lambda d: Instruction("div", d, self.pick("int"), self.pick("int")))
        elif choice == "concat" and self.regs_of("str"):
            self._def(b, "str", lambda d: Instruction("concat", d, self.pick("str"), self.pick("str")))
        elif choice == "len" and self.regs_of("str"):
            self._def(b, "int", lambda d: Instruction("len", d, self.pick("str")))
        elif choice == "lower" and self.regs_of("str"):
            self._def(b, "str", lambda d: Instruction("lower", d, self.pick("str")))
        elif choice == "clear":
            self._def(b, "str", lambda d: Instruction("clear", d))
        elif choice == "mov" and self.scalar_types():
            t = rng.choice(self.scalar_types())
            self._def(b, t, lambda d: Instruction("mov", d, self.pick(t)))
        elif choice == "cmp":
            self.cond(b)
        elif choice == "emit":
            self.emit_random(b)

    def _def(self, b: int, typ: str, make) -> int | None:
        d = self.dest(typ)
        if d is None:
            return None
        self.emit(b, make(d))
        self.define(d, typ)
        return d

    def emit_random(self, b: int) -> None:
        types = self.scalar_types()
        if types:
            k = self.pick(self.rng.choice(types))
            v = self.pick(self.rng.choice(types))
            self.emit(b, Instruction("emit", k, v))

    def cond(self, b: int) -> int | None:
        """Define a fresh bool register from a comparison (or a literal)."""
        rng = self.rng
        ordered = [t for t in ("int", "str") if self.regs_of(t)]
        if ordered and rng.random() < 0.8:
            t = rng.choice(ordered)
            op = rng.choice(("cmpeq", "cmpgt", "cmpge"))
            return self._def(b, "bool", lambda d: Instruction(op, d, self.pick(t), self.pick(t)))
        return self._def(b, "bool", lambda d: Instruction("const", d, rng.random() < 0.5))

    def straight(self, b: int, lo: int = 0, hi: int = 3) -> None:
        for _ in range(self.rng.randint(lo, hi)):
            self.stmt(b)

    # -- structure ---------------------------------------------------------

    def seq(self, b: int, depth: int) -> int | None:
        """Generate code starting in block *b*; return the open block control
        falls into, or None when the sequence ended with ``ret``."""
        for _ in range(self.rng.randint(1, 3)):
            self.straight(b)
            r = self.rng.random()
            if depth < 3 and r < 0.35 and self.room(3):
                b = self.if_else(b, depth)
            elif depth < 3 and r < 0.7 and self.room(3):
                b = self.loop(b, depth)
            if b is None:
                return None
        self.straight(b)
        return b

    def if_else(self, b: int, depth: int) -> int | None:
        c = self.cond(b)
        if c is None:
            bools = self.regs_of("bool")
            if not bools:
                return b
            c = self.rng.choice(bools)
        join = self.new_block()
        then = self.new_block()
        has_else = self.room(1) and self.rng.random() < 0.6
        other = self.new_block() if has_else else join
        self.terminate(b, Instruction("br", c, then, other))

        outer = dict(self.env)
        t_end = self.seq(then, depth + 1)
        t_env = self.env
        early_ret = t_end is not None and self.rng.random() < 0.15
        if t_end is not None:
            if early_ret:
                self.emit_random(t_end)
                self.terminate(t_end, Instruction("ret"))
            else:
                self.terminate(t_end, Instruction("jmp", join))
        self.env = dict(outer)
        if has_else:
            e_end = self.seq(other, depth + 1)
            e_env = self.env
            if e_end is None:
                # else-arm returned: join is reached only through the then-arm
                if t_end is None or early_ret:
                    self.env = dict(outer)
                    self.terminate(join, Instruction("ret"))
                    return None
                self.env = t_env
                return join
            self.terminate(e_end, Instruction("jmp", join))
        else:
            e_env = outer
        if t_end is None or early_ret:
            self.env = e_env
        else:
            self.env = {r: t for r, t in t_env.items() if e_env.get(r) == t}
        return join

    def loop(self, b: int, depth: int) -> int:
        rng = self.rng
        if self.kind == REDUCE and rng.random() < 0.6:
            cursor, typ, has, nxt = 1, self.value_type, "vhasnext", "vnext"
        else:
            strs = self.regs_of("str")
            if not strs:
                return b
            cursor = self.dest("tok")
            if cursor is None:
                return b
            self.emit(b, Instruction("tokenize", cursor, rng.choice(strs), rng.choice(_DELIMS)))
            self.define(cursor, "tok")
            typ, has, nxt = "str", "hasnext", "next"
        head = self.new_block()
        body = self.new_block()
        exit_ = self.new_block()
        self.terminate(b, Instruction("jmp", head))
        flag = self.dest("bool")
        if flag is None:
            raise _OutOfRegisters
        self.emit(head, Instruction(has, flag, cursor))
        self.define(flag, "bool")
        self.terminate(head, Instruction("br", flag, body, exit_))

        outer = dict(self.env)
        self.protected.add(cursor)
        item = self.dest(typ)
        if item is not None:
            self.emit(body, Instruction(nxt, item, cursor))
            self.define(item, typ)
        else:
            # still consume the cursor so the loop terminates
            spare = self.dest("bool")
            if spare is None:
                raise _OutOfRegisters
            self.emit(body, Instruction(nxt, spare, cursor))
        if rng.random() < 0.7:
            self.emit_random(body)
        end = self.seq(body, depth + 1)
        if end is not None:
            self.terminate(end, Instruction("jmp", head))
        if cursor != 1:
            self.protected.discard(cursor)
        self.env = outer
        return exit_

    def build(self) -> FunctionDef:
        b = self.new_block()
        end = self.seq(b, 0)
        if end is not None:
            if self.rng.random() < 0.8:
                self.emit_random(end)
            self.terminate(end, Instruction("ret"))
        blocks = tuple(BasicBlock(i + 1, tuple(body), term) for i, (body, term) in enumerate(self.blocks))
        return FunctionDef(self.kind, blocks)


class _OutOfRegisters(Exception):
    pass


def random_function(
    rng: random.Random,
    kind: str = MAP,
    value_type: str = "int",
    max_blocks: int = MAX_BLOCKS,
    max_registers: int = MAX_REGISTERS,
) -> FunctionDef:
    for _ in range(100):
        try:
            return _FnGen(rng, kind, value_type, max_blocks, max_registers).build()
        except _OutOfRegisters:
            continue
    raise RuntimeError("could not generate a program within the register budget")


def random_program(rng: random.Random | int, name: str = "rand") -> GeneratedProgram:
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    vt = rng.choice(("int", "str"))
    return GeneratedProgram(Program(name, random_function(rng, MAP), random_function(rng, REDUCE, vt)), vt)


def random_text(rng: random.Random, max_tokens: int = 4) -> str:
    n = rng.randint(0, max_tokens)
    return rng.choice((" ", "  ", ",")).join(rng.choice(_WORDS) for _ in range(n))


def random_map_input(rng: random.Random) -> InstanceInput:
    return InstanceInput.map(rng.randint(0, 3), random_text(rng))


def random_reduce_input(rng: random.Random, value_type: str, max_values: int = 4) -> InstanceInput:
    n = rng.randint(0, max_values)
    if value_type == "int":
        values = tuple(rng.randint(-2, 3) for _ in range(n))
    else:
        values = tuple(rng.choice(_WORDS) for _ in range(n))
    return InstanceInput.reduce(rng.choice(_WORDS), values)


def random_inputs(rng: random.Random, gp: GeneratedProgram, phase: str, n: int) -> list[InstanceInput]:
    if phase == MAP:
        return [random_map_input(rng) for _ in range(n)]
    return [random_reduce_input(rng, gp.reduce_value_type) for _ in range(n)]
