import json
import random
from collections import Counter, defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from vmr import programs
from vmr.cluster import (
    GENESIS,
    Cheat,
    Collude,
    JobSpec,
    LayoutError,
    OutputMutator,
    TamperLog,
    TamperOutput,
    TamperProgram,
    TraceRecord,
    chain,
    load_artifacts,
    reconstruct_shuffle,
    run_job,
    verify_chain,
    verify_chain_lines,
    write_artifacts,
)
from vmr.runtime import InstanceInput
from vmr.workloads import WorkloadSpec, generate

CORPUS = [
    "the quick brown fox",
    "",
    "jumps over the lazy dog",
    "the dog",
    "a  b   a",
    "",
    "fox fox fox",
    "lazy",
    "over and over",
    "the end",
]


def oracle_counts(lines):
    c = Counter(w for line in lines for w in line.split(" ") if w)
    return sorted(c.items())


def records(lines):
    return tuple((i, s) for i, s in enumerate(lines))


def fake_record(i, outputs=(("a", 1),)):
    return TraceRecord("j", "MAP", "w0", 0, i, InstanceInput.map(i, "a"), (2, 3, 2, 4), outputs, "OK", "")


def test_honest_wordcount_matches_oracle(wordcount):
    art = run_job(JobSpec(wordcount, records(CORPUS), num_workers=3, chunk_size=2))
    assert sorted(art.final_output) == oracle_counts(CORPUS)
    assert [a.record for a in art.assignment] == list(range(len(CORPUS)))
    assert len(art.map_log) == len(CORPUS)
    assert {(r.worker_id, r.task_id) for r in art.map_log} == {
        (f"w{t % 3}", t) for t in range(5)
    }


def test_tamper_program_corrupts_only_that_worker(wordcount):
    spec = JobSpec(wordcount, records(CORPUS), num_workers=3, chunk_size=2)
    honest = run_job(spec)
    bad = run_job(spec, {"w1": TamperProgram(programs.load("wordcount_attack1"))})
    for h, b in zip(honest.map_log, bad.map_log):
        if b.worker_id == "w1":
            assert all(k == "" for k, _ in b.outputs)
        else:
            assert (h.input, h.cft, h.outputs) == (b.input, b.cft, b.outputs)
    assert sorted(bad.final_output) != oracle_counts(CORPUS)


def test_cheat_drops_about_half(wordcount):
    lines = ["x y"] * 400
    art = run_job(JobSpec(wordcount, records(lines), num_workers=2, chunk_size=10), {"w0": Cheat(0.5, phases=("MAP",))})
    assigned = sum(a.worker_id == "w0" for a in art.assignment)
    logged = sum(r.worker_id == "w0" for r in art.map_log)
    assert assigned == 200 and 70 < logged < 130
    assert dict(art.final_output)["x"] < 400


def test_collusion_members_agree(wordcount):
    bad = programs.load("wordcount_attack2")
    lines = ["same line"] * 12
    art = run_job(
        JobSpec(wordcount, records(lines), num_workers=3, chunk_size=2),
        {"w0": Collude("g", bad), "w2": Collude("g", bad)},
    )
    outs = defaultdict(set)
    for r in art.map_log:
        outs[r.worker_id].add(r.outputs)
    assert outs["w0"] == outs["w2"] == {(("same", 2), ("line", 2))}
    assert outs["w1"] == {(("same", 1), ("line", 1))}


def test_tamper_output_mutator(wordcount):
    art = run_job(JobSpec(wordcount, records(["a b"]), num_workers=1), {"w0": TamperOutput(OutputMutator("value", "add", 5))})
    assert art.map_log[0].outputs == (("a", 6), ("b", 6))
    assert OutputMutator("key", "append", "!")(("k", 1)) == ("k!", 1)
    assert OutputMutator("value", "set", 0)(("k", 9)) == ("k", 0)


def test_shuffle_examples():
    log = chain([fake_record(0, (("a", 1), ("b", 1), ("a", 1)))])
    assert reconstruct_shuffle(log) == [("a", (1, 1)), ("b", (1,))]
    assert reconstruct_shuffle([]) == []


def test_shuffle_orders_type_then_value():
    log = chain([fake_record(0, (("b", 2), (1, "x"), (True, 0), ("a", 10), ("b", 1)))])
    assert reconstruct_shuffle(log) == [(True, (0,)), (1, ("x",)), ("a", (10,)), ("b", (1, 2))]


def test_shuffle_matches_group_by_oracle(wordcount):
    lines = generate(WorkloadSpec("wordcount", records=60, vocabulary=30, seed=4))
    art = run_job(JobSpec(wordcount, tuple(lines), num_workers=3, chunk_size=7))
    oracle = defaultdict(list)
    for r in art.map_log:
        for k, v in r.outputs:
            oracle[k].append(v)
    assert art.shuffle_snapshot == [(k, tuple(sorted(oracle[k]))) for k in sorted(oracle)]


def test_chain_links_and_detects_edits():
    log = chain(fake_record(i) for i in range(8))
    assert log[0].prev_hash == GENESIS
    assert verify_chain(log).ok
    assert verify_chain([]).ok
    bad = list(log)
    bad[5] = TraceRecord.from_json({**json.loads(log[5].to_line()), "outputs": [["a", 2]]})
    assert verify_chain(bad).broken_at == 5
    # truncation keeps a valid prefix; reconciliation catches it instead
    assert verify_chain(log[:6]).ok


def test_tamper_log_breaks_chain(wordcount):
    spec = JobSpec(wordcount, records(CORPUS), num_workers=2, chunk_size=2)
    art = run_job(spec, {"w1": TamperLog(1, {"outputs": [["x", 1]]})})
    st_ = verify_chain(art.map_log)
    assert not st_.ok
    idx = [i for i, r in enumerate(art.map_log) if r.worker_id == "w1"][1]
    assert st_.broken_at == idx


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 19), st.sampled_from(["task_id", "instance_seq", "worker_id", "cft", "outputs", "status"]))
def test_any_field_mutation_detected(idx, field_name):
    log = chain(fake_record(i) for i in range(20))
    d = json.loads(log[idx].to_line())
    d[field_name] = {"task_id": 99, "instance_seq": 99, "worker_id": "w9", "cft": [2, 4],
                     "outputs": [], "status": "ERROR"}[field_name]
    bad = list(log)
    bad[idx] = TraceRecord.from_json(d)
    assert verify_chain(bad).broken_at is not None and verify_chain(bad).broken_at <= idx


def test_job_is_deterministic(wordcount, tmp_path):
    spec = JobSpec(wordcount, records(CORPUS * 3), num_workers=3, chunk_size=4, rng_seed=9)
    beh = {"w1": Cheat(0.3)}
    a = write_artifacts(run_job(spec, beh), tmp_path / "a")
    b = write_artifacts(run_job(spec, beh), tmp_path / "b")
    for name in ("map.log", "reduce.log", "output.tsv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_artifacts_round_trip(wordcount, tmp_path):
    art = run_job(JobSpec(wordcount, records(CORPUS), num_workers=2, chunk_size=3))
    d = write_artifacts(art, tmp_path)
    assert d == tmp_path / "job" / "job0"
    back = load_artifacts(d)
    assert back.map_log == art.map_log and back.reduce_log == art.reduce_log
    assert back.final_output == art.final_output
    assert back.assignment == art.assignment
    assert verify_chain_lines(back.map_lines).ok


def test_missing_layout(tmp_path):
    with pytest.raises(LayoutError):
        load_artifacts(tmp_path)


def test_stored_line_byte_flip_detected(wordcount, tmp_path):
    art = run_job(JobSpec(wordcount, records(CORPUS), num_workers=2, chunk_size=3))
    lines = [r.to_line().encode() for r in art.map_log]
    assert verify_chain_lines(lines).ok
    # whitespace inserted into an entry would survive a parse-and-rehash; raw bytes catch it
    lines[3] = lines[3].replace(b'"phase":', b'"phase": ', 1)
    assert verify_chain_lines(lines).broken_at == 3


def test_unknown_worker_behavior_rejected(wordcount):
    with pytest.raises(ValueError):
        run_job(JobSpec(wordcount, (), num_workers=1), {"w5": Cheat()})


def test_empty_job(wordcount):
    art = run_job(JobSpec(wordcount, ()))
    assert art.final_output == () and art.map_log == [] and art.reduce_log == []
