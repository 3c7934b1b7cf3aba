"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal.

Run with ``pytest tests/test_acceptance.py -v`` (or execute this file).
"""

import random
import sys
import time
from collections import defaultdict

import numpy as np
import pytest

from vmr import programs
from vmr.cli import main as cli_main
from vmr.cluster import (
    Cheat,
    Collude,
    JobSpec,
    OutputMutator,
    TamperOutput,
    TamperProgram,
    run_job,
    verify_chain_lines,
    write_artifacts,
)
from vmr.ir import MAP, REDUCE
from vmr.randprog import random_inputs, random_program
from vmr.runtime import InstanceInput, execute, exec_tainted
from vmr.verifier import ACCEPT, CF_FILTER, RECONCILE, REEXEC_MAP, REJECT, slice_program, verify_job
from vmr.workloads import WorkloadSpec, generate

TRIALS = 100


@pytest.fixture
def say(capsys):
    def _say(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok

    return _say


def wordcount_job(seed, behaviors=None, **over):
    rng = random.Random(seed)
    spec = WorkloadSpec(
        "wordcount",
        records=over.get("records", rng.randint(30, 80)),
        vocabulary=rng.randint(50, 200),
        empty_fraction=0.1,
        duplicate_fraction=0.2,
        seed=seed,
    )
    job = JobSpec(
        programs.load("wordcount"),
        tuple(generate(spec)),
        num_workers=over.get("workers", rng.randint(3, 5)),
        chunk_size=rng.randint(4, 10),
        rng_seed=seed,
    )
    return job


def busy_workers(job, phase):
    art = run_job(job)
    log = art.map_log if phase == MAP else art.reduce_log
    return sorted({r.worker_id for r in log})


# -- 1 ---------------------------------------------------------------------


def _attack_trial(kind, seed):
    rng = random.Random(1000 + seed)
    job = wordcount_job(seed)
    if kind == "map":
        target = [rng.choice(busy_workers(job, MAP))]
        b = [
            TamperProgram(programs.load("wordcount_attack1"), (MAP,)),
            TamperProgram(programs.load("wordcount_attack2"), (MAP,)),
            TamperOutput(OutputMutator("value", "add", 1), (MAP,)),
        ][seed % 3]
        behaviors = {target[0]: b}
    elif kind == "reduce":
        target = [rng.choice(busy_workers(job, REDUCE))]
        b = [
            TamperProgram(programs.load("wordcount_attack_reduce"), (REDUCE,)),
            TamperOutput(OutputMutator("value", "add", 1), (REDUCE,)),
        ][seed % 2]
        behaviors = {target[0]: b}
    else:
        target = sorted(rng.sample(busy_workers(job, MAP), 2))
        bad = programs.load("wordcount_attack2")
        behaviors = {w: Collude("g1", bad) for w in target}
    rep = verify_job(job.program, run_job(job, behaviors))
    return rep.decision == REJECT and rep.malicious_workers == set(target)


def _honest_trial(seed):
    rng = random.Random(seed)
    app = ("wordcount", "invertedindex", "hitcount", "frequency")[seed % 4]
    kind = {"wordcount": "wordcount", "invertedindex": "docset", "hitcount": "weblog", "frequency": "hits"}[app]
    spec = WorkloadSpec(kind, records=rng.randint(0, 80), vocabulary=rng.randint(5, 100),
                        empty_fraction=0.1, duplicate_fraction=0.1, seed=seed)
    job = JobSpec(programs.load(app), tuple(generate(spec)), num_workers=rng.randint(1, 5),
                  chunk_size=rng.randint(1, 12), rng_seed=seed)
    return verify_job(job.program, run_job(job)).decision == ACCEPT


def test_c1_attack_matrix(say):
    t0 = time.perf_counter()
    hits = {k: sum(_attack_trial(k, s) for s in range(TRIALS)) for k in ("map", "reduce", "collusion")}
    false_rejects = sum(not _honest_trial(s) for s in range(TRIALS))
    elapsed = time.perf_counter() - t0
    ok = all(v == TRIALS for v in hits.values()) and false_rejects == 0 and elapsed < 300
    say("C1 attack matrix", ok,
        f"detected map {hits['map']}/{TRIALS}, reduce {hits['reduce']}/{TRIALS}, "
        f"collusion {hits['collusion']}/{TRIALS} (exact worker sets); honest REJECTs "
        f"{false_rejects}/{TRIALS}; {elapsed:.1f}s (budget 300s)")
    assert ok


# -- 2, 3 ------------------------------------------------------------------


def test_c2_attack1_cf_filter(say):
    job = wordcount_job(42, workers=3)
    rep = verify_job(job.program, run_job(job, {"w1": TamperProgram(programs.load("wordcount_attack1"))}))
    ok = (rep.decision, rep.verdict.stage, rep.cost.records_reexecuted) == (REJECT, CF_FILTER, 0)
    say("C2 attack 1 rejected by control-flow filter", ok,
        f"{rep.decision} at {rep.verdict.stage}, records_reexecuted={rep.cost.records_reexecuted} (want 0)")
    assert ok


def test_c3_attack2_evidence_pair(say):
    job = wordcount_job(43, workers=3)
    rep = verify_job(job.program, run_job(job, {"w0": TamperProgram(programs.load("wordcount_attack2"))}))
    pairs = {
        (rec[1], rex[1])
        for ev in rep.verdict.malicious_workers.get("w0", [])
        if ev.recorded_output and ev.reexecuted_output
        for rec, rex in zip(ev.recorded_output, ev.reexecuted_output)
    }
    ok = rep.decision == REJECT and rep.verdict.stage == REEXEC_MAP and (2, 1) in pairs
    say("C3 attack 2 rejected at re-execution", ok,
        f"{rep.decision} at {rep.verdict.stage}, evidence (recorded, re-executed) pairs {sorted(pairs)}")
    assert ok


# -- 4 ---------------------------------------------------------------------


def test_c4_cheating_modes(say):
    lenient, strict = 0, 0
    seeds = range(20)
    for s in seeds:
        job = wordcount_job(s, records=60)
        art = run_job(job, {busy_workers(job, MAP)[0]: Cheat(0.5, (MAP,))})
        assert len(art.map_log) < len(job.input)
        lenient += verify_job(job.program, art, reconcile=False).decision == ACCEPT
        r = verify_job(job.program, art, reconcile=True)
        strict += (r.decision, r.verdict.stage) == (REJECT, RECONCILE)
    ok = lenient == strict == len(seeds)
    say("C4 cheating worker", ok,
        f"--no-reconcile ACCEPT {lenient}/{len(seeds)}; reconcile REJECT@RECONCILE {strict}/{len(seeds)}")
    assert ok


# -- 5 ---------------------------------------------------------------------


def test_c5_slice_soundness(say):
    pairs, groups, violations, folded = 0, 0, 0, 0
    for seed in range(1000):
        gp = random_program(seed)
        rng = random.Random(seed * 31 + 7)
        for phase in (MAP, REDUCE):
            fn = gp.program.function(phase)
            by_cft = defaultdict(list)
            for inp in random_inputs(rng, gp, phase, 10):
                res = execute(fn, inp)
                by_cft[(res.cft, res.status)].append((inp, res))
            pairs += 1
            for members in by_cft.values():
                groups += 1
                _, rep = exec_tainted(fn, members[0][0])
                sl = slice_program(fn, phase, rep)
                folded += sl.folded_sites > 0
                for inp, res in members:
                    violations += not execute(sl.function, inp).same_behavior(res)
    ok = pairs >= 1000 and violations == 0
    say("C5 slice soundness", ok,
        f"{pairs} (program, input-set) pairs, {groups} groups ({folded} with folded sites), "
        f"{violations} violations")
    assert ok


# -- 6 ---------------------------------------------------------------------


def _cost(app, kind, seed=5, records=2000, **kw):
    spec = WorkloadSpec(kind, records=records, seed=seed, **kw)
    job = JobSpec(programs.load(app), tuple(generate(spec)), num_workers=4, chunk_size=50)
    rep = verify_job(job.program, run_job(job))
    assert rep.decision == ACCEPT
    return rep.cost


def test_c6_cost(say):
    costs = {
        "wordcount": _cost("wordcount", "wordcount", vocabulary=1000, empty_fraction=0.1, duplicate_fraction=0.2),
        "invertedindex": _cost("invertedindex", "docset", vocabulary=1000, empty_fraction=0.1),
        "hitcount": _cost("hitcount", "weblog", records=5000, vocabulary=300, skew=1.2),
        "frequency": _cost("frequency", "hits", vocabulary=300),
    }
    monotone = all(c.instr_partial <= c.instr_full for c in costs.values())
    wc, fr = costs["wordcount"].speedup, costs["frequency"].speedup
    ok = monotone and wc >= 1.1 and f"{fr:.2f}" == "1.00" and fr == 1.0
    table = ", ".join(f"{k} {c.speedup:.2f}" for k, c in costs.items())
    say("C6 cost", ok,
        f"partial<=full on all: {monotone}; WordCount speedup {wc:.3f} (>=1.1); "
        f"Frequency {fr:.2f} (=1.00); [{table}]")
    assert ok


# -- 7 ---------------------------------------------------------------------


def test_c7_tracing_overhead(say, tmp_path):
    wc = programs.load("wordcount")
    lines = generate(WorkloadSpec("wordcount", records=10_000, vocabulary=1000, empty_fraction=0.1, seed=1))
    inputs = [InstanceInput.map(k, v) for k, v in lines]

    def run(trace):
        t0 = time.perf_counter()
        for inp in inputs:
            execute(wc.map_fn, inp, trace=trace)
        return time.perf_counter() - t0

    run(True)  # warm the compiled-function cache
    plain = min(run(False) for _ in range(3))
    traced = min(run(True) for _ in range(3))
    ratio = traced / plain

    sizes = [1000, 2000, 4000, 8000]
    log_bytes = []
    for n in sizes:
        recs = generate(WorkloadSpec("wordcount", records=n, vocabulary=1000, empty_fraction=0.1, seed=2))
        d = write_artifacts(run_job(JobSpec(wc, tuple(recs), num_workers=4, chunk_size=100)), tmp_path / str(n))
        log_bytes.append((d / "map.log").stat().st_size + (d / "reduce.log").stat().st_size)
    r2 = np.corrcoef(sizes, log_bytes)[0, 1] ** 2
    ok = ratio <= 2.0 and r2 >= 0.99
    say("C7 tracing overhead", ok,
        f"trace/plain wall time {ratio:.2f}x (<=2.0) on 10^4 records; "
        f"log bytes {dict(zip(sizes, log_bytes))}, R^2={r2:.5f} (>=0.99)")
    assert ok


# -- 8 ---------------------------------------------------------------------


def test_c8_hash_chain_mutations(say, tmp_path):
    lines = generate(WorkloadSpec("wordcount", records=1000, vocabulary=300, seed=8))
    art = run_job(JobSpec(programs.load("wordcount"), tuple(lines), num_workers=4, chunk_size=25))
    data = (write_artifacts(art, tmp_path) / "map.log").read_bytes()
    entries = data.split(b"\n")[:-1]
    assert len(entries) == 1000 and verify_chain_lines(entries).ok
    # entry index owning each byte (a line's trailing newline belongs to it)
    owner = np.repeat(np.arange(len(entries)), [len(e) + 1 for e in entries])
    rng = random.Random(8)
    detected = 0
    for _ in range(100):
        pos = rng.randrange(len(data))
        new = rng.choice([b for b in range(256) if b != data[pos]])
        mutated = data[:pos] + bytes([new]) + data[pos + 1 :]
        got = mutated.split(b"\n")
        if got and got[-1] == b"":
            got.pop()
        st = verify_chain_lines(got)
        detected += st.broken_at is not None and st.broken_at <= owner[pos]
    ok = detected == 100
    say("C8 hash-chain tamper evidence", ok, f"{detected}/100 single-byte mutations detected at or before their entry")
    assert ok


# -- 9 ---------------------------------------------------------------------


def _pipeline(root):
    root.mkdir()
    assert cli_main(["gen", "--records", "300", "--empty-fraction", "0.1", "--duplicate-fraction", "0.2",
                     "--seed", "99", "-o", str(root / "in.jsonl")]) == 0
    (root / "run.json").write_text(
        '{"program": "builtin:wordcount", "input": "in.jsonl", "workers": 3, "chunk_size": 16,'
        ' "output": "out", "rng_seed": 5,'
        ' "behaviors": {"w1": {"type": "TAMPER_PROGRAM", "program": "builtin:wordcount_attack2"}}}'
    )
    assert cli_main(["run", str(root / "run.json")]) == 0
    cli_main(["verify", "builtin:wordcount", str(root / "out/job/job0"), "--report", str(root / "report.json")])
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c9_determinism(say, tmp_path, capsys):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    capsys.readouterr()
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    ok = same and len(a) == 7
    say("C9 determinism", ok, f"{len(a)} files compared across two gen->run->verify pipelines, identical={same}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
