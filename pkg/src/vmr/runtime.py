"""Deterministic interpreter for MiniMR functions.

Three modes share one execution loop so that outputs and instruction counts
cannot drift between them:

* plain: outputs only;
* trace: also records the control-flow trace (block indices entered after
  the entry block);
* taint: additionally marks the entry registers r0/r1 tainted, propagates
  taint along explicit data flow and records per-site facts used by the
  slicer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import (
    INT_MAX,
    INT_MIN,
    MAP,
    REDUCE,
    FunctionDef,
    Program,
    TokCursor,
    ValCursor,
    is_scalar,
    vkey,
)

OK = "OK"
ERROR = "ERROR"

DEFAULT_MAX_STEPS = 1_000_000


@dataclass(frozen=True)
class InstanceInput:
    """Input of one map or reduce instance.

    MAP instances use ``value``; REDUCE instances use ``values`` (the
    shuffle-sorted value sequence for ``key``).
    """

    kind: str
    key: object
    value: object = None
    values: tuple = ()

    @classmethod
    def map(cls, key, value) -> "InstanceInput":
        return cls(MAP, key, value)

    @classmethod
    def reduce(cls, key, values) -> "InstanceInput":
        return cls(REDUCE, key, None, tuple(values))

    def ident(self) -> tuple:
        """Type-aware identity (``1`` and ``True`` differ)."""
        if self.kind == MAP:
            return (MAP, vkey(self.key), vkey(self.value))
        return (REDUCE, vkey(self.key), tuple(vkey(v) for v in self.values))

    def to_json(self) -> dict:
        if self.kind == MAP:
            return {"kind": MAP, "key": self.key, "value": self.value}
        return {"kind": REDUCE, "key": self.key, "values": list(self.values)}

    @classmethod
    def from_json(cls, d: dict) -> "InstanceInput":
        if d["kind"] == MAP:
            return cls.map(d["key"], d["value"])
        return cls.reduce(d["key"], d["values"])


@dataclass(frozen=True)
class ExecResult:
    outputs: tuple
    cft: tuple
    status: str = OK
    error: str | None = None
    instr_exec_count: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OK

    def same_behavior(self, other: "ExecResult") -> bool:
        """Outputs, trace and fault identical (typed comparison)."""
        return (
            _okey(self.outputs) == _okey(other.outputs)
            and tuple(self.cft) == tuple(other.cft)
            and self.status == other.status
            and self.error == other.error
        )


def _okey(outputs):
    return tuple((vkey(k), vkey(v)) for k, v in outputs)


@dataclass
class SiteInfo:
    tainted: bool = False
    observed: dict = field(default_factory=dict)  # vkey -> value, untainted executions only
    branch_dirs: set = field(default_factory=set)
    exec_count: int = 0
    faulted: bool = False

    @property
    def observed_values(self) -> list:
        return [self.observed[k] for k in sorted(self.observed)]


@dataclass
class TaintReport:
    """Per-site facts from one taint-mode run; absent sites never executed."""

    sites: dict = field(default_factory=dict)  # (block, offset) -> SiteInfo

    def __getitem__(self, site) -> SiteInfo:
        return self.sites[site]

    def __contains__(self, site) -> bool:
        return site in self.sites

    def executed_blocks(self) -> set[int]:
        return {b for b, _ in self.sites}


class ExecFault(Exception):
    pass


# ---------------------------------------------------------------------------
# Opcode semantics
# ---------------------------------------------------------------------------


def _want_int(v):
    if type(v) is not int:
        raise ExecFault(f"type mismatch: expected int, got {_tname(v)}")
    return v


def _want_str(v):
    if type(v) is not str:
        raise ExecFault(f"type mismatch: expected str, got {_tname(v)}")
    return v


def _tname(v) -> str:
    if v is None:
        return "unwritten"
    return type(v).__name__


def _checked(x: int) -> int:
    if not INT_MIN <= x <= INT_MAX:
        raise ExecFault("integer overflow")
    return x


def _read(regs, r):
    v = regs[r]
    if v is None:
        raise ExecFault(f"malformed program: r{r} read before write")
    return v


def _tokenize(s: str, delim: str) -> tuple[str, ...]:
    if not delim:
        return (s,) if s else ()
    out, cur = [], []
    for ch in s:
        if ch in delim:
            if cur:
                out.append("".join(cur))
                cur = []
        else:
            cur.append(ch)
    if cur:
        out.append("".join(cur))
    return tuple(out)


def _op_const(regs, d, lit):
    regs[d] = lit


def _op_mov(regs, d, s):
    regs[d] = _read(regs, s)


def _op_add(regs, d, a, b):
    regs[d] = _checked(_want_int(_read(regs, a)) + _want_int(_read(regs, b)))


def _op_sub(regs, d, a, b):
    regs[d] = _checked(_want_int(_read(regs, a)) - _want_int(_read(regs, b)))


def _op_mul(regs, d, a, b):
    regs[d] = _checked(_want_int(_read(regs, a)) * _want_int(_read(regs, b)))


def _op_div(regs, d, a, b):
    x = _want_int(_read(regs, a))
    y = _want_int(_read(regs, b))
    if y == 0:
        raise ExecFault("division by zero")
    q = abs(x) // abs(y)
    regs[d] = _checked(q if (x < 0) == (y < 0) else -q)


def _op_concat(regs, d, a, b):
    regs[d] = _want_str(_read(regs, a)) + _want_str(_read(regs, b))


def _op_len(regs, d, s):
    regs[d] = len(_want_str(_read(regs, s)))


def _op_lower(regs, d, s):
    regs[d] = _want_str(_read(regs, s)).lower()


def _op_clear(regs, d):
    regs[d] = ""


def _op_tokenize(regs, d, s, delim):
    regs[d] = TokCursor(_tokenize(_want_str(_read(regs, s)), delim))


def _want_cursor(v, cls):
    if type(v) is not cls:
        raise ExecFault(f"type mismatch: expected {cls.__name__}, got {_tname(v)}")
    return v


def _op_hasnext(regs, d, t):
    c = _want_cursor(_read(regs, t), TokCursor)
    regs[d] = c.pos < len(c.tokens)


def _op_next(regs, d, t):
    c = _want_cursor(_read(regs, t), TokCursor)
    if c.pos >= len(c.tokens):
        raise ExecFault("cursor exhausted")
    regs[t] = TokCursor(c.tokens, c.pos + 1)
    regs[d] = c.tokens[c.pos]


def _op_vhasnext(regs, d, v):
    c = _want_cursor(_read(regs, v), ValCursor)
    regs[d] = c.pos < len(c.values)


def _op_vnext(regs, d, v):
    c = _want_cursor(_read(regs, v), ValCursor)
    if c.pos >= len(c.values):
        raise ExecFault("cursor exhausted")
    regs[v] = ValCursor(c.values, c.pos + 1)
    regs[d] = c.values[c.pos]


def _scalar(v):
    if not is_scalar(v):
        raise ExecFault(f"type mismatch: expected scalar, got {_tname(v)}")
    return v


def _op_cmpeq(regs, d, a, b):
    regs[d] = vkey(_scalar(_read(regs, a))) == vkey(_scalar(_read(regs, b)))


def _ordered_pair(x, y):
    if type(x) is int and type(y) is int or type(x) is str and type(y) is str:
        return x, y
    raise ExecFault(f"type mismatch: cannot order {_tname(x)} and {_tname(y)}")


def _op_cmpgt(regs, d, a, b):
    x, y = _ordered_pair(_read(regs, a), _read(regs, b))
    regs[d] = x > y


def _op_cmpge(regs, d, a, b):
    x, y = _ordered_pair(_read(regs, a), _read(regs, b))
    regs[d] = x >= y


_HANDLERS = {
    "const": _op_const,
    "mov": _op_mov,
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "div": _op_div,
    "concat": _op_concat,
    "len": _op_len,
    "lower": _op_lower,
    "clear": _op_clear,
    "tokenize": _op_tokenize,
    "hasnext": _op_hasnext,
    "next": _op_next,
    "vhasnext": _op_vhasnext,
    "vnext": _op_vnext,
    "cmpeq": _op_cmpeq,
    "cmpgt": _op_cmpgt,
    "cmpge": _op_cmpge,
}

# terminator / special kinds in compiled form
_EMIT, _JMP, _BR, _RET, _PLAIN = range(5)


def _compile(fn: FunctionDef):
    cached = fn.__dict__.get("_compiled")
    if cached is not None:
        return cached
    blocks = [None]
    for b in fn.blocks:
        code = []
        for ins in b.instructions():
            if ins.op == "emit":
                code.append((_EMIT, None, ins.args, ins))
            elif ins.op == "jmp":
                code.append((_JMP, None, ins.args, ins))
            elif ins.op == "br":
                code.append((_BR, None, ins.args, ins))
            elif ins.op == "ret":
                code.append((_RET, None, ins.args, ins))
            else:
                code.append((_PLAIN, _HANDLERS[ins.op], ins.args, ins))
        blocks.append(tuple(code))
    compiled = tuple(blocks)
    object.__setattr__(fn, "_compiled", compiled)
    return compiled


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def entry_registers(fn: FunctionDef, inp: InstanceInput) -> list:
    if inp.kind != fn.kind:
        raise ValueError(f"{inp.kind} input for {fn.kind} function")
    regs = [None] * max(fn.register_count, 2)
    regs[0] = inp.key
    regs[1] = inp.value if inp.kind == MAP else ValCursor(tuple(inp.values))
    return regs


def execute(
    fn: FunctionDef,
    inp: InstanceInput,
    trace: bool = True,
    report: TaintReport | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> ExecResult:
    """Run *fn* on *inp*.  With *report*, run in taint mode and fill it."""
    code = _compile(fn)
    regs = entry_registers(fn, inp)
    record = trace or report is not None
    taint = None
    if report is not None:
        taint = [False] * len(regs)
        taint[0] = taint[1] = True
    outputs: list = []
    cft: list = []
    count = 0
    bi = 1
    off = 0
    try:
        while True:
            block = code[bi]
            nxt = 0
            for off, (kind, handler, args, ins) in enumerate(block):
                count += 1
                if count > max_steps:
                    raise ExecFault("step limit exceeded")
                if taint is not None:
                    info = _site_before(report, taint, (bi, off), ins)
                if kind == _PLAIN:
                    handler(regs, *args)
                    if taint is not None:
                        _site_after(info, taint, regs, ins)
                elif kind == _EMIT:
                    k = _scalar(_read(regs, args[0]))
                    v = _scalar(_read(regs, args[1]))
                    outputs.append((k, v))
                elif kind == _JMP:
                    nxt = args[0]
                elif kind == _BR:
                    c = _read(regs, args[0])
                    if type(c) is not bool:
                        raise ExecFault(f"type mismatch: branch on {_tname(c)}")
                    nxt = args[1] if c else args[2]
                    if taint is not None:
                        info.branch_dirs.add(c)
                else:
                    nxt = 0
            if nxt == 0:
                break
            bi = nxt
            if record:
                cft.append(bi)
    except ExecFault as exc:
        if taint is not None and (bi, off) in report.sites:
            report.sites[(bi, off)].faulted = True
        return ExecResult(tuple(outputs), tuple(cft), ERROR, str(exc), count)
    return ExecResult(tuple(outputs), tuple(cft), OK, None, count)


def _site_before(report, taint, site, ins) -> SiteInfo:
    info = report.sites.get(site)
    if info is None:
        info = report.sites[site] = SiteInfo()
    info.exec_count += 1
    src = False
    for r in ins.uses():
        if taint[r]:
            src = True
            break
    info._src = src
    if src:
        info.tainted = True
    return info


def _site_after(info, taint, regs, ins):
    src = info._src
    defs = ins.defs()
    for d in defs:
        taint[d] = src
    if not src:
        v = regs[defs[0]]
        info.observed.setdefault(vkey(v), v)


def exec_map(p: Program, inp: InstanceInput, trace: bool = True, **kw) -> ExecResult:
    if inp.kind != MAP:
        raise ValueError("exec_map needs a MAP input")
    return execute(p.map_fn, inp, trace=trace, **kw)


def exec_reduce(p: Program, inp: InstanceInput, trace: bool = True, **kw) -> ExecResult:
    if inp.kind != REDUCE:
        raise ValueError("exec_reduce needs a REDUCE input")
    return execute(p.reduce_fn, inp, trace=trace, **kw)


def exec_instance(p: Program, inp: InstanceInput, trace: bool = True, **kw) -> ExecResult:
    return execute(p.function(inp.kind), inp, trace=trace, **kw)


def exec_tainted(
    p: Program | FunctionDef, inp: InstanceInput, **kw
) -> tuple[ExecResult, TaintReport]:
    fn = p.function(inp.kind) if isinstance(p, Program) else p
    report = TaintReport()
    res = execute(fn, inp, trace=True, report=report, **kw)
    return res, report
