"""Simulated MapReduce cluster with untrusted workers.

The master (trusted) splits the input into fixed-size chunks assigned to
workers round-robin, builds the shuffle from the logged map outputs and
assembles the final output.  Workers execute instances through the traced
interpreter and append one :class:`TraceRecord` per instance to a
hash-chained log.  Worker behaviors inject the attacks to be detected.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .ir import MAP, REDUCE, Program, serialize, vkey
from .runtime import ERROR, OK, ExecResult, InstanceInput, execute

GENESIS = "00" * 32


def canonical_json(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def sha256_hex(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def input_digest(inp: InstanceInput) -> str:
    return sha256_hex(canonical_json(inp.to_json()))


def program_digest(p: Program) -> str:
    return sha256_hex(serialize(p))


# ---------------------------------------------------------------------------
# Job description and worker behaviors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JobSpec:
    program: Program
    input: tuple  # ((key, value), ...)
    num_workers: int = 3
    chunk_size: int = 10
    rng_seed: int = 0
    job_id: str = "job0"

    def __post_init__(self):
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        object.__setattr__(self, "input", tuple((k, v) for k, v in self.input))

    @property
    def workers(self) -> list[str]:
        return [worker_name(i) for i in range(self.num_workers)]


def worker_name(i: int) -> str:
    return f"w{i}"


@dataclass(frozen=True)
class Honest:
    pass


@dataclass(frozen=True)
class Cheat:
    """Silently skip about ``skip_fraction`` of assigned instances."""

    skip_fraction: float = 0.5
    phases: tuple = (MAP, REDUCE)


@dataclass(frozen=True)
class TamperProgram:
    program: Program
    phases: tuple = (MAP, REDUCE)


@dataclass(frozen=True)
class Collude:
    group_id: str
    program: Program
    phases: tuple = (MAP, REDUCE)


@dataclass(frozen=True)
class OutputMutator:
    """Deterministic rewrite of every emitted pair.

    ``op`` is ``set`` (replace the field by ``operand``), ``add`` (integer
    increment) or ``append`` (string suffix); non-applicable pairs are left
    alone.
    """

    field: str = "value"
    op: str = "add"
    operand: object = 1

    def __call__(self, pair: tuple) -> tuple:
        k, v = pair
        target = v if self.field == "value" else k
        if self.op == "set":
            target = self.operand
        elif self.op == "add" and type(target) is int:
            target = target + self.operand
        elif self.op == "append" and type(target) is str:
            target = target + self.operand
        return (k, target) if self.field == "value" else (target, v)


@dataclass(frozen=True)
class TamperOutput:
    mutator: OutputMutator = OutputMutator()
    phases: tuple = (MAP,)


@dataclass(frozen=True)
class TamperLog:
    """After the job, overwrite fields of the worker's ``entry_index``-th
    record in the given phase log without re-chaining."""

    entry_index: int
    rewrite: Mapping = field(default_factory=dict)
    phase: str = MAP


HONEST = Honest()


def behavior_program(b, phase: str) -> Program | None:
    if isinstance(b, (TamperProgram, Collude)) and phase in b.phases:
        return b.program
    return None


# ---------------------------------------------------------------------------
# Trace records and the hash chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    job_id: str
    phase: str
    worker_id: str
    task_id: int
    instance_seq: int
    input: InstanceInput
    cft: tuple
    outputs: tuple
    status: str = OK
    error: str | None = None
    prev_hash: str = GENESIS
    entry_hash: str = ""

    def payload(self) -> dict:
        return {
            "job_id": self.job_id,
            "phase": self.phase,
            "worker_id": self.worker_id,
            "task_id": self.task_id,
            "instance_seq": self.instance_seq,
            "input": self.input.to_json(),
            "cft": list(self.cft),
            "outputs": [[k, v] for k, v in self.outputs],
            "status": self.status,
            "error": self.error,
            "prev_hash": self.prev_hash,
        }

    def payload_line(self) -> str:
        return canonical_json(self.payload())

    def compute_hash(self) -> str:
        return chain_hash(self.prev_hash, self.payload_line())

    def to_line(self) -> str:
        d = self.payload()
        d["entry_hash"] = self.entry_hash
        return canonical_json(d)

    @classmethod
    def from_json(cls, d: dict) -> "TraceRecord":
        return cls(
            job_id=d["job_id"],
            phase=d["phase"],
            worker_id=d["worker_id"],
            task_id=d["task_id"],
            instance_seq=d["instance_seq"],
            input=InstanceInput.from_json(d["input"]),
            cft=tuple(d["cft"]),
            outputs=tuple((k, v) for k, v in d["outputs"]),
            status=d["status"],
            error=d["error"],
            prev_hash=d["prev_hash"],
            entry_hash=d["entry_hash"],
        )

    @classmethod
    def from_line(cls, line: str) -> "TraceRecord":
        return cls.from_json(json.loads(line))

    @property
    def ref(self) -> tuple:
        return (self.worker_id, self.task_id, self.instance_seq)

    def result(self) -> ExecResult:
        return ExecResult(self.outputs, self.cft, self.status, self.error)


def chain_hash(prev_hex: str, payload: str) -> str:
    return sha256_hex(bytes.fromhex(prev_hex) + payload.encode("utf-8"))


def chain(records: Iterable[TraceRecord]) -> list[TraceRecord]:
    """Re-link *records* into a fresh chain starting at the genesis hash."""
    out = []
    prev = GENESIS
    for r in records:
        r = replace(r, prev_hash=prev, entry_hash="")
        r = replace(r, entry_hash=r.compute_hash())
        out.append(r)
        prev = r.entry_hash
    return out


@dataclass(frozen=True)
class ChainStatus:
    broken_at: int | None = None
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.broken_at is None

    def __bool__(self):
        return self.ok


CHAIN_OK = ChainStatus()


def verify_chain(log: Sequence[TraceRecord]) -> ChainStatus:
    prev = GENESIS
    for i, r in enumerate(log):
        if r.prev_hash != prev:
            return ChainStatus(i, "prev_hash does not link")
        if r.compute_hash() != r.entry_hash:
            return ChainStatus(i, "entry_hash mismatch")
        prev = r.entry_hash
    return CHAIN_OK


def verify_chain_lines(lines: Sequence[str | bytes]) -> ChainStatus:
    """Check the chain on the exact stored bytes of each JSON line."""
    prev = GENESIS
    for i, raw in enumerate(lines):
        try:
            line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
            d = json.loads(line)
            entry_hash = d["entry_hash"]
            suffix = canonical_json({"entry_hash": entry_hash})[1:]
            if not (isinstance(entry_hash, str) and line.endswith("," + suffix)):
                return ChainStatus(i, "entry_hash not the final field")
            payload = line[: -len(suffix) - 1] + "}"
        except (UnicodeDecodeError, ValueError, KeyError, TypeError):
            return ChainStatus(i, "unparseable entry")
        if d.get("prev_hash") != prev:
            return ChainStatus(i, "prev_hash does not link")
        try:
            expected = chain_hash(prev, payload)
        except ValueError:
            return ChainStatus(i, "bad prev_hash")
        if expected != entry_hash:
            return ChainStatus(i, "entry_hash mismatch")
        prev = entry_hash
    return CHAIN_OK


# ---------------------------------------------------------------------------
# Job execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Assignment:
    """Master's record of who was given what: ``record`` is the input record
    index (MAP) or the shuffle key position (REDUCE)."""

    record: int
    task_id: int
    worker_id: str
    instance_seq: int
    digest: str

    def to_json(self) -> dict:
        return {
            "record": self.record,
            "task_id": self.task_id,
            "worker_id": self.worker_id,
            "instance_seq": self.instance_seq,
            "digest": self.digest,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Assignment":
        return cls(d["record"], d["task_id"], d["worker_id"], d["instance_seq"], d["digest"])


@dataclass
class JobArtifacts:
    job_id: str
    final_output: tuple
    map_log: list
    reduce_log: list
    assignment: list
    reduce_assignment: list
    shuffle_snapshot: list
    manifest: dict = field(default_factory=dict)
    # exact stored lines when loaded from disk; None for in-memory artifacts
    map_lines: list | None = None
    reduce_lines: list | None = None


def _split(items: Sequence, chunk: int) -> list[Sequence]:
    return [items[i : i + chunk] for i in range(0, len(items), chunk)]


def _run_phase(spec, phase, inputs, behaviors, honest_fn):
    """Execute one phase; returns (records, assignment)."""
    records, assignment = [], []
    workers = spec.workers
    cheat_rngs = {
        w: random.Random(f"{spec.rng_seed}/{w}/{phase}")
        for w in workers
        if isinstance(behaviors.get(w, HONEST), Cheat)
    }
    pos = 0
    for task_id, chunk in enumerate(_split(inputs, spec.chunk_size)):
        w = workers[task_id % len(workers)]
        b = behaviors.get(w, HONEST)
        alt = behavior_program(b, phase)
        fn = alt.function(phase) if alt is not None else honest_fn
        for seq, inp in enumerate(chunk):
            assignment.append(Assignment(pos, task_id, w, seq, input_digest(inp)))
            pos += 1
            if w in cheat_rngs and phase in b.phases and cheat_rngs[w].random() < b.skip_fraction:
                continue
            res = execute(fn, inp, trace=True)
            outputs = res.outputs
            if isinstance(b, TamperOutput) and phase in b.phases:
                outputs = tuple(b.mutator(o) for o in outputs)
            records.append(
                TraceRecord(
                    job_id=spec.job_id,
                    phase=phase,
                    worker_id=w,
                    task_id=task_id,
                    instance_seq=seq,
                    input=inp,
                    cft=res.cft,
                    outputs=outputs,
                    status=res.status,
                    error=res.error,
                )
            )
    return chain(records), assignment


def reconstruct_shuffle(map_log: Iterable[TraceRecord]) -> list[tuple]:
    """Group logged map outputs by key: ``[(key, (values...)), ...]``.

    Keys and values are ordered type-then-value.  Outputs of faulted
    instances are not shuffled.
    """
    groups: dict = {}
    for r in map_log:
        if r.status != OK:
            continue
        for k, v in r.outputs:
            kk = vkey(k)
            if kk not in groups:
                groups[kk] = (k, [])
            groups[kk][1].append(v)
    return [
        (k, tuple(sorted(vs, key=vkey))) for _, (k, vs) in sorted(groups.items(), key=lambda kv: kv[0])
    ]


def _apply_log_tamper(log: list, worker: str, b: TamperLog) -> list:
    mine = [i for i, r in enumerate(log) if r.worker_id == worker]
    if not mine:
        return log
    idx = mine[b.entry_index % len(mine)]
    d = json.loads(log[idx].to_line())
    d.update(b.rewrite)
    out = list(log)
    out[idx] = TraceRecord.from_json(d)
    return out


def run_job(spec: JobSpec, behaviors: Mapping[str, object] | None = None) -> JobArtifacts:
    behaviors = dict(behaviors or {})
    unknown = set(behaviors) - set(spec.workers)
    if unknown:
        raise ValueError(f"behaviors for unknown workers: {sorted(unknown)}")
    p = spec.program
    map_inputs = [InstanceInput.map(k, v) for k, v in spec.input]
    map_log, assignment = _run_phase(spec, MAP, map_inputs, behaviors, p.map_fn)

    shuffle = reconstruct_shuffle(map_log)
    reduce_inputs = [InstanceInput.reduce(k, vs) for k, vs in shuffle]
    reduce_log, reduce_assignment = _run_phase(spec, REDUCE, reduce_inputs, behaviors, p.reduce_fn)

    final = tuple(o for r in reduce_log if r.status == OK for o in r.outputs)

    for w, b in sorted(behaviors.items()):
        if isinstance(b, TamperLog):
            if b.phase == MAP:
                map_log = _apply_log_tamper(map_log, w, b)
            else:
                reduce_log = _apply_log_tamper(reduce_log, w, b)

    manifest = {
        "job_id": spec.job_id,
        "program": p.name,
        "program_digest": program_digest(p),
        "input_digest": sha256_hex(canonical_json([[k, v] for k, v in spec.input])),
        "num_workers": spec.num_workers,
        "chunk_size": spec.chunk_size,
        "rng_seed": spec.rng_seed,
    }
    manifest["spec_digest"] = sha256_hex(canonical_json(manifest))
    return JobArtifacts(
        job_id=spec.job_id,
        final_output=final,
        map_log=map_log,
        reduce_log=reduce_log,
        assignment=assignment,
        reduce_assignment=reduce_assignment,
        shuffle_snapshot=shuffle,
        manifest=manifest,
    )


# ---------------------------------------------------------------------------
# On-disk layout: <root>/job/<id>/{map.log, reduce.log, output.tsv, manifest.json}
# ---------------------------------------------------------------------------


class LayoutError(Exception):
    """Artifacts directory is missing files or has unreadable metadata."""


def job_dir(root: str | Path, job_id: str) -> Path:
    return Path(root) / "job" / job_id


def format_output_tsv(pairs: Iterable[tuple]) -> str:
    return "".join(f"{canonical_json(k)}\t{canonical_json(v)}\n" for k, v in pairs)


def write_artifacts(art: JobArtifacts, root: str | Path) -> Path:
    d = job_dir(root, art.job_id)
    d.mkdir(parents=True, exist_ok=True)
    for name, log in (("map.log", art.map_log), ("reduce.log", art.reduce_log)):
        with open(d / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(r.to_line() + "\n" for r in log)
    (d / "output.tsv").write_text(format_output_tsv(art.final_output), encoding="utf-8", newline="\n")
    manifest = dict(art.manifest)
    manifest["assignment"] = [a.to_json() for a in art.assignment]
    manifest["reduce_assignment"] = [a.to_json() for a in art.reduce_assignment]
    (d / "manifest.json").write_text(
        json.dumps(manifest, indent=1, ensure_ascii=False) + "\n", encoding="utf-8", newline="\n"
    )
    return d


def _read_log(path: Path) -> tuple[list, list]:
    raw = path.read_bytes().split(b"\n")
    if raw and raw[-1] == b"":
        raw.pop()
    records = []
    for line in raw:
        try:
            records.append(TraceRecord.from_line(line.decode("utf-8")))
        except (UnicodeDecodeError, ValueError, KeyError, TypeError):
            records.append(None)
    return raw, records


def load_artifacts(path: str | Path) -> JobArtifacts:
    d = Path(path)
    for name in ("map.log", "reduce.log", "output.tsv", "manifest.json"):
        if not (d / name).is_file():
            raise LayoutError(f"missing {name} in {d}")
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        assignment = [Assignment.from_json(a) for a in manifest.pop("assignment")]
        reduce_assignment = [Assignment.from_json(a) for a in manifest.pop("reduce_assignment")]
        final = []
        for line in (d / "output.tsv").read_text(encoding="utf-8").splitlines():
            k, v = line.split("\t")
            final.append((json.loads(k), json.loads(v)))
    except (ValueError, KeyError, TypeError) as exc:
        raise LayoutError(f"corrupt metadata in {d}: {exc}") from None
    map_lines, map_log = _read_log(d / "map.log")
    reduce_lines, reduce_log = _read_log(d / "reduce.log")
    return JobArtifacts(
        job_id=manifest.get("job_id", d.name),
        final_output=tuple(final),
        map_log=map_log,
        reduce_log=reduce_log,
        assignment=assignment,
        reduce_assignment=reduce_assignment,
        shuffle_snapshot=[],
        manifest=manifest,
        map_lines=map_lines,
        reduce_lines=reduce_lines,
    )
