"""Offline verifier: control-flow filtering, slicing and partial re-execution.

Pipeline for one job::

    chain check -> reconcile -> MAP (group, filter, slice, select, re-execute)
    -> shuffle check -> REDUCE (same as MAP)

Map instances are verified first; reducers are only examined once every
mapper has been accepted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .cfg import Cfg, build_cfg, check_cft, contributes_output
from .cluster import (
    JobArtifacts,
    TraceRecord,
    input_digest,
    reconstruct_shuffle,
    verify_chain,
    verify_chain_lines,
)
from .ir import (
    CURSOR_ADVANCE,
    MAP,
    REDUCE,
    BasicBlock,
    FunctionDef,
    Instruction,
    Program,
    is_scalar,
    validate_function,
    vkey,
)
from .runtime import OK, InstanceInput, TaintReport, execute, exec_tainted

ACCEPT = "ACCEPT"
REJECT = "REJECT"

CHAIN = "CHAIN"
RECONCILE = "RECONCILE"
CF_FILTER = "CF_FILTER"
REEXEC_MAP = "REEXEC_MAP"
SHUFFLE_CHECK = "SHUFFLE_CHECK"
REEXEC_REDUCE = "REEXEC_REDUCE"

KEPT = "KEPT"
CONST_FOLDED = "CONST_FOLDED"
JMP_FOLDED = "JMP_FOLDED"
DROPPED = "DROPPED"


class SliceInvalid(Exception):
    """The generated slice failed re-validation (an implementation bug)."""


# ---------------------------------------------------------------------------
# Grouping and control-flow filtering
# ---------------------------------------------------------------------------


@dataclass
class ControlFlowGroup:
    phase: str
    cft: tuple
    members: list  # TraceRecords ordered by (worker_id, task_id, instance_seq)

    @property
    def representative(self) -> TraceRecord:
        return self.members[0]


def group_instances(log: Iterable[TraceRecord], phase: str) -> list[ControlFlowGroup]:
    by_cft: dict = {}
    for r in log:
        if r.phase == phase:
            by_cft.setdefault(tuple(r.cft), []).append(r)
    return [
        ControlFlowGroup(phase, cft, sorted(ms, key=lambda r: r.ref))
        for cft, ms in sorted(by_cft.items())
    ]


@dataclass
class Evidence:
    worker_id: str
    phase: str | None
    instance: tuple | None  # (worker_id, task_id, instance_seq)
    kind: str
    recorded_output: list | None = None
    reexecuted_output: list | None = None
    invalid_cft_position: int | None = None
    detail: str = ""

    def to_json(self) -> dict:
        d = {"kind": self.kind, "phase": self.phase}
        if self.instance is not None:
            w, t, s = self.instance
            d["instance"] = {"worker_id": w, "task_id": t, "instance_seq": s}
        if self.invalid_cft_position is not None:
            d["invalid_cft_position"] = self.invalid_cft_position
        if self.recorded_output is not None:
            d["recorded_output"] = [list(o) for o in self.recorded_output]
        if self.reexecuted_output is not None:
            d["reexecuted_output"] = [list(o) for o in self.reexecuted_output]
        if self.detail:
            d["detail"] = self.detail
        return d

    def sort_key(self):
        return (self.phase or "", self.instance or ("", -1, -1), self.kind, self.detail)


def filter_groups(groups: Sequence[ControlFlowGroup], g: Cfg) -> tuple[list, list]:
    """Split groups into CF-valid ones and rejection evidence.

    A member is rejected when its trace is not a path of the static CFG
    (faulted members need not end in ``ret``), or when it logged outputs
    although its path never enters an emitting block.  Valid groups keep
    only their valid members.
    """
    valid, rejected = [], []
    for grp in groups:
        emits = contributes_output(g, grp.cft)
        keep = []
        for m in grp.members:
            chk = check_cft(g, grp.cft, complete=m.status == OK)
            if not chk.valid:
                rejected.append(
                    Evidence(m.worker_id, grp.phase, m.ref, "invalid_cft",
                             invalid_cft_position=chk.bad_position, detail=chk.reason)
                )
            elif not emits and m.outputs:
                rejected.append(
                    Evidence(m.worker_id, grp.phase, m.ref, "output_without_emit_block",
                             recorded_output=list(m.outputs))
                )
            else:
                keep.append(m)
        if keep:
            valid.append(ControlFlowGroup(grp.phase, grp.cft, keep))
    return valid, rejected


# ---------------------------------------------------------------------------
# Program slicing
# ---------------------------------------------------------------------------


@dataclass
class SlicedProgram:
    base: str
    phase: str
    function: FunctionDef
    elimination_map: dict  # (block, offset) -> (KEPT|CONST_FOLDED|JMP_FOLDED|DROPPED, payload)
    fallback: bool = False

    @property
    def folded_sites(self) -> int:
        return sum(1 for k, _ in self.elimination_map.values() if k in (CONST_FOLDED, JMP_FOLDED))

    def reads_registers(self) -> set[int]:
        return {r for _, ins in self.function.sites() for r in ins.uses()}


def _foldable(ins: Instruction, info) -> bool:
    if info.tainted or info.faulted or len(info.observed) != 1:
        return False
    if ins.op in CURSOR_ADVANCE or len(ins.defs()) != 1:
        return False
    return is_scalar(next(iter(info.observed.values())))


def slice_program(p: Program | FunctionDef, phase: str, rep_taint: TaintReport, base: str = "") -> SlicedProgram:
    """Executable slice of the trusted function for one control-flow group.

    Seeds are every executed ``emit`` and ``ret``, every branch whose
    condition is tainted or that went both ways, and every tainted or
    faulting site.  Writers of registers read by kept sites are kept, or
    replaced by a ``const`` of their single observed value when untainted.
    Branches with an untainted condition and one direction become ``jmp``.
    Other executed sites are dead on this path and dropped; blocks never
    entered keep only a ``ret`` so block numbering (and traces) survive.
    """
    fn = p.function(phase) if isinstance(p, Program) else p
    base = base or (p.name if isinstance(p, Program) else fn.kind.lower())
    entered = rep_taint.executed_blocks()
    decision: dict = {}
    writers: dict[int, list] = {}
    work: list[int] = []

    def keep(site, ins):
        decision[site] = (KEPT, None)
        work.extend(ins.uses())

    executed = []
    for site, ins in fn.sites():
        if site[0] not in entered:
            decision[site] = (DROPPED, None)
            continue
        executed.append((site, ins))
        for r in ins.defs():
            writers.setdefault(r, []).append((site, ins))

    for site, ins in executed:
        info = rep_taint.sites.get(site)
        if info is None or info.tainted or info.faulted or ins.op in ("emit", "ret", "jmp"):
            keep(site, ins)
        elif ins.op == "br":
            if len(info.branch_dirs) > 1:
                keep(site, ins)
            else:
                decision[site] = (JMP_FOLDED, next(iter(info.branch_dirs)))

    seen_regs: set[int] = set()
    while work:
        r = work.pop()
        if r in seen_regs:
            continue
        seen_regs.add(r)
        for site, ins in writers.get(r, ()):
            if site in decision:
                continue
            info = rep_taint.sites[site]
            if _foldable(ins, info):
                decision[site] = (CONST_FOLDED, next(iter(info.observed.values())))
            else:
                keep(site, ins)

    for site, _ in executed:
        decision.setdefault(site, (DROPPED, None))

    blocks = []
    for b in fn.blocks:
        if b.index not in entered:
            blocks.append(BasicBlock(b.index, (), Instruction("ret")))
            continue
        body = []
        for i, ins in enumerate(b.body):
            kind, val = decision[(b.index, i)]
            if kind == KEPT:
                body.append(ins)
            elif kind == CONST_FOLDED:
                body.append(Instruction("const", ins.defs()[0], val))
        term = b.terminator
        kind, val = decision[(b.index, len(b.body))]
        if kind == JMP_FOLDED:
            term = Instruction("jmp", term.args[1] if val else term.args[2])
        blocks.append(BasicBlock(b.index, tuple(body), term))
    sliced = FunctionDef(fn.kind, tuple(blocks), fn.register_count)
    diags = validate_function(sliced)
    if diags:
        raise SliceInvalid("; ".join(diags))
    return SlicedProgram(base, phase, sliced, decision)


def identity_slice(fn: FunctionDef, base: str, phase: str) -> SlicedProgram:
    return SlicedProgram(base, phase, fn, {site: (KEPT, None) for site, _ in fn.sites()}, fallback=True)


# ---------------------------------------------------------------------------
# Input data slicing
# ---------------------------------------------------------------------------


@dataclass
class Selection:
    input: InstanceInput
    members: list  # member records sharing this (projected) input


def _full_projection(inp: InstanceInput):
    return inp.ident()


def projection_for(reads: set[int]) -> Callable[[InstanceInput], tuple]:
    """Memoization key restricted to the entry registers a slice reads."""
    use_key, use_val = 0 in reads, 1 in reads

    def project(inp: InstanceInput):
        k = vkey(inp.key) if use_key else None
        if not use_val:
            v = None
        elif inp.kind == MAP:
            v = vkey(inp.value)
        else:
            v = tuple(vkey(x) for x in inp.values)
        return (inp.kind, k, v)

    return project


def select_data(
    group: ControlFlowGroup,
    g: Cfg,
    projection: Callable[[InstanceInput], tuple] = _full_projection,
    representative: TraceRecord | None = None,
) -> list[Selection]:
    """Choose the inputs to re-execute for *group*.

    Groups whose path never emits re-execute only the representative (plus
    faulted members, whose fault must be reproduced); the zero-output check
    in :func:`filter_groups` covers everyone else.  Other groups re-execute
    each distinct input once and compare against every member sharing it.
    """
    rep = representative or group.representative
    if not contributes_output(g, group.cft):
        chosen = [rep] + [m for m in group.members if m.status != OK and m is not rep]
    else:
        chosen = group.members
    sel: dict = {}
    for m in chosen:
        key = projection(m.input)
        if key not in sel:
            sel[key] = Selection(m.input, [])
        sel[key].members.append(m)
    return list(sel.values())


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class CostMetrics:
    records_total: int = 0
    records_reexecuted: int = 0
    records_skipped_no_output: int = 0
    records_skipped_dedup: int = 0
    instr_full: int = 0
    instr_partial: int = 0
    instr_analysis: int = 0
    wall_time_partial: float = 0.0
    wall_time_full: float = 0.0

    @property
    def speedup(self) -> float | None:
        if self.instr_partial == 0:
            return None
        return self.instr_full / self.instr_partial

    def add(self, other: "CostMetrics") -> None:
        for f in self.__dataclass_fields__:
            setattr(self, f, getattr(self, f) + getattr(other, f))

    def to_json(self, include_timing: bool = False) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__ if not f.startswith("wall_time")}
        sp = self.speedup
        d["speedup"] = None if sp is None else round(sp, 6)
        if include_timing:
            d["wall_time_partial"] = self.wall_time_partial
            d["wall_time_full"] = self.wall_time_full
        return d


@dataclass
class Verdict:
    decision: str
    stage: str | None
    malicious_workers: dict  # worker_id -> [Evidence]
    cited: list = field(default_factory=list)  # evidence not attributable to a worker

    @property
    def accepted(self) -> bool:
        return self.decision == ACCEPT


@dataclass
class GroupSummary:
    phase: str
    cft: tuple
    member_count: int
    distinct_inputs: int
    folded_sites: int
    dropped_sites: int
    fallback: bool

    def to_json(self) -> dict:
        return {
            "phase": self.phase,
            "cft": list(self.cft),
            "member_count": self.member_count,
            "distinct_inputs": self.distinct_inputs,
            "folded_sites": self.folded_sites,
            "dropped_sites": self.dropped_sites,
            "fallback": self.fallback,
        }


@dataclass
class VerificationReport:
    program: str
    verdict: Verdict
    cost: CostMetrics
    phase_cost: dict
    groups: list
    reconcile: bool = True

    @property
    def decision(self) -> str:
        return self.verdict.decision

    @property
    def malicious_workers(self) -> set:
        return set(self.verdict.malicious_workers)

    def to_json(self, include_timing: bool = False) -> dict:
        v = self.verdict
        return {
            "program": self.program,
            "verdict": v.decision,
            "stage": v.stage,
            "reconcile": self.reconcile,
            "malicious_workers": {
                w: [e.to_json() for e in sorted(ev, key=Evidence.sort_key)]
                for w, ev in sorted(v.malicious_workers.items())
            },
            "cited": [e.to_json() for e in sorted(v.cited, key=Evidence.sort_key)],
            "cost": self.cost.to_json(include_timing),
            "phase_cost": {ph: c.to_json(include_timing) for ph, c in sorted(self.phase_cost.items())},
            "groups": [gs.to_json() for gs in self.groups],
        }

    def summary(self) -> str:
        v = self.verdict
        sp = self.cost.speedup
        lines = [f"{v.decision}" + (f" at {v.stage}" if v.decision == REJECT else "")]
        if v.malicious_workers:
            lines.append("malicious workers: " + ", ".join(sorted(v.malicious_workers)))
        lines.append(
            f"re-executed {self.cost.records_reexecuted}/{self.cost.records_total} instances, "
            f"speedup {'n/a' if sp is None else f'{sp:.2f}'}"
        )
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


def _verify_group(fn, base, g, grp, cost, evidence):
    """Slice and partially re-execute one CF-valid group."""
    # representative: first member (in ref order) whose honest taint run
    # follows the group trace; members that do not are themselves evidence
    rep, rep_res, rep_report = None, None, None
    flagged = set()
    for m in grp.members:
        res, report = exec_tainted(fn, m.input)
        cost.instr_analysis += res.instr_exec_count
        if tuple(res.cft) == grp.cft and res.status == m.status:
            rep, rep_res, rep_report = m, res, report
            break
        flagged.add(m.ref)
        evidence.append(
            Evidence(m.worker_id, grp.phase, m.ref, "output_mismatch",
                     recorded_output=list(m.outputs), reexecuted_output=list(res.outputs),
                     detail=f"recorded cft {list(m.cft)} status {m.status}; "
                            f"re-executed cft {list(res.cft)} status {res.status}")
        )
    if rep is None:
        return GroupSummary(grp.phase, grp.cft, len(grp.members), 0, 0, 0, True)

    try:
        sl = slice_program(fn, grp.phase, rep_report, base)
        check = execute(sl.function, rep.input, trace=True)
        cost.instr_analysis += check.instr_exec_count
        if not check.same_behavior(rep_res):
            sl = identity_slice(fn, base, grp.phase)
    except SliceInvalid:
        sl = identity_slice(fn, base, grp.phase)

    members = [m for m in grp.members if m.ref not in flagged]
    remaining = ControlFlowGroup(grp.phase, grp.cft, members)
    selection = select_data(remaining, g, projection_for(sl.reads_registers()), rep)
    selected_members = sum(len(s.members) for s in selection)
    if contributes_output(g, grp.cft):
        cost.records_skipped_dedup += len(members) - len(selection)
    else:
        cost.records_skipped_no_output += len(members) - selected_members
        cost.records_skipped_dedup += selected_members - len(selection)

    t0 = time.perf_counter()
    for s in selection:
        res = execute(sl.function, s.input, trace=True)
        cost.records_reexecuted += 1
        cost.instr_partial += res.instr_exec_count
        for m in s.members:
            if not res.same_behavior(m.result()):
                evidence.append(
                    Evidence(m.worker_id, grp.phase, m.ref, "output_mismatch",
                             recorded_output=list(m.outputs), reexecuted_output=list(res.outputs),
                             detail="" if res.status == m.status and res.cft == m.cft else
                             f"recorded {m.status} cft {list(m.cft)}; "
                             f"re-executed {res.status} cft {list(res.cft)}")
                )
    cost.wall_time_partial += time.perf_counter() - t0
    dropped = sum(1 for k, _ in sl.elimination_map.values() if k == DROPPED)
    return GroupSummary(grp.phase, grp.cft, len(grp.members), len(selection), sl.folded_sites, dropped, sl.fallback)


def _full_baseline(fn: FunctionDef, log: Sequence[TraceRecord], cost: CostMetrics) -> None:
    t0 = time.perf_counter()
    for r in log:
        cost.instr_full += execute(fn, r.input, trace=False).instr_exec_count
    cost.wall_time_full += time.perf_counter() - t0


def verify_phase(p: Program, phase: str, log: Sequence[TraceRecord], cost: CostMetrics):
    """Verify one phase.  Returns ``(stage or None, evidence, group summaries)``."""
    fn = p.function(phase)
    g = build_cfg(fn)
    groups = group_instances(log, phase)
    valid, rejected = filter_groups(groups, g)
    if rejected:
        return CF_FILTER, rejected, []
    evidence: list = []
    summaries = [_verify_group(fn, p.name, g, grp, cost, evidence) for grp in valid]
    if evidence:
        return (REEXEC_MAP if phase == MAP else REEXEC_REDUCE), evidence, summaries
    return None, [], summaries


def _reconcile(log, assignment, phase, reconcile: bool) -> list:
    evidence = []
    by_ref: dict = {}
    for r in log:
        if r.ref in by_ref or r.phase != phase:
            evidence.append(Evidence(r.worker_id, phase, r.ref, "duplicate_or_misfiled_record"))
            continue
        by_ref[r.ref] = r
    assigned = set()
    for a in assignment:
        ref = (a.worker_id, a.task_id, a.instance_seq)
        assigned.add(ref)
        r = by_ref.get(ref)
        if r is None:
            if reconcile:
                evidence.append(Evidence(a.worker_id, phase, ref, "missing_record",
                                         detail=f"assigned record {a.record} not logged"))
        elif input_digest(r.input) != a.digest:
            evidence.append(Evidence(a.worker_id, phase, ref, "input_mismatch",
                                     detail=f"logged input differs from assigned record {a.record}"))
    for ref, r in by_ref.items():
        if ref not in assigned:
            evidence.append(Evidence(r.worker_id, phase, ref, "unassigned_record"))
    return evidence


def _shuffle_check(map_log, reduce_log) -> list:
    expected = {vkey(k): vs for k, vs in reconstruct_shuffle(map_log)}
    evidence = []
    for r in reduce_log:
        vs = expected.get(vkey(r.input.key))
        if vs is None or tuple(vkey(v) for v in vs) != tuple(vkey(v) for v in r.input.values):
            evidence.append(Evidence(r.worker_id, REDUCE, r.ref, "shuffle_mismatch",
                                     detail="recorded reduce input differs from reconstructed shuffle"))
    return evidence


def _reject(stage, evidence) -> Verdict:
    workers: dict = {}
    cited = []
    for e in evidence:
        if e.worker_id is None:
            cited.append(e)
        else:
            workers.setdefault(e.worker_id, []).append(e)
    return Verdict(REJECT, stage, workers, cited)


def verify_job(
    p: Program,
    artifacts: JobArtifacts,
    reconcile: bool = True,
    baseline: bool = True,
) -> VerificationReport:
    """Verify a finished job against the trusted program *p*.

    ``reconcile`` enables the completeness check (every assigned instance
    has a record), which is what catches workers that silently skip work.
    ``baseline`` additionally runs the full re-execution used as the cost
    reference.
    """
    map_log, reduce_log = artifacts.map_log, artifacts.reduce_log
    phase_cost = {MAP: CostMetrics(), REDUCE: CostMetrics()}
    summaries: list = []

    def finish(verdict: Verdict) -> VerificationReport:
        total = CostMetrics()
        for c in phase_cost.values():
            total.add(c)
        return VerificationReport(p.name, verdict, total, phase_cost, summaries, reconcile)

    # 1. tamper evidence on both logs
    for phase, lines, log in (
        (MAP, artifacts.map_lines, map_log),
        (REDUCE, artifacts.reduce_lines, reduce_log),
    ):
        st = verify_chain_lines(lines) if lines is not None else verify_chain(log)
        if not st.ok:
            e = Evidence(None, phase, None, "chain_broken",
                         detail=f"{phase.lower()}.log entry {st.broken_at}: {st.reason}")
            return finish(Verdict(REJECT, CHAIN, {}, [e]))

    phase_cost[MAP].records_total = len(map_log)
    phase_cost[REDUCE].records_total = len(reduce_log)
    if baseline:
        _full_baseline(p.map_fn, map_log, phase_cost[MAP])
        _full_baseline(p.reduce_fn, reduce_log, phase_cost[REDUCE])

    # 2. map completeness and input authenticity
    ev = _reconcile(map_log, artifacts.assignment, MAP, reconcile)
    if ev:
        return finish(_reject(RECONCILE, ev))

    # 3. mappers
    stage, ev, sums = verify_phase(p, MAP, map_log, phase_cost[MAP])
    summaries.extend(sums)
    if stage:
        return finish(_reject(stage, ev))

    # 4. reducers received exactly the shuffle of the accepted map outputs
    ev = _shuffle_check(map_log, reduce_log)
    if ev:
        return finish(_reject(SHUFFLE_CHECK, ev))
    ev = _reconcile(reduce_log, artifacts.reduce_assignment, REDUCE, reconcile)
    final = tuple(o for r in reduce_log if r.status == OK for o in r.outputs)
    if tuple((vkey(k), vkey(v)) for k, v in final) != tuple(
        (vkey(k), vkey(v)) for k, v in artifacts.final_output
    ):
        ev.append(Evidence(None, REDUCE, None, "final_output_mismatch",
                           detail="final output is not the concatenation of logged reduce outputs"))
    if ev:
        return finish(_reject(RECONCILE, ev))

    # 5. reducers
    stage, ev, sums = verify_phase(p, REDUCE, reduce_log, phase_cost[REDUCE])
    summaries.extend(sums)
    if stage:
        return finish(_reject(stage, ev))
    return finish(Verdict(ACCEPT, None, {}))
