r"""
Detecting misbehaving workers
=============================

Run the same WordCount job under different worker behaviors and print
the verdict, the stage that caught the problem and the workers blamed.
"""

from vmr import programs
from vmr.cluster import Cheat, Collude, JobSpec, OutputMutator, TamperLog, TamperOutput, TamperProgram, run_job
from vmr.ir import MAP, REDUCE
from vmr.verifier import verify_job
from vmr.workloads import WorkloadSpec, generate

wc = programs.load("wordcount")
lines = generate(WorkloadSpec("wordcount", records=120, vocabulary=80, empty_fraction=0.1,
                              duplicate_fraction=0.2, seed=3))
job = JobSpec(wc, tuple(lines), num_workers=4, chunk_size=8)

scenarios = {
    "all honest": {},
    "guard + clear (attack 1)": {"w1": TamperProgram(programs.load("wordcount_attack1"), (MAP,))},
    "constant 2 (attack 2)": {"w2": TamperProgram(programs.load("wordcount_attack2"), (MAP,))},
    "colluding pair": {w: Collude("g", programs.load("wordcount_attack2")) for w in ("w0", "w3")},
    "reducer adds 2": {"w1": TamperProgram(programs.load("wordcount_attack_reduce"), (REDUCE,))},
    "mapper rewrites values": {"w3": TamperOutput(OutputMutator("value", "set", 5))},
    "edited log entry": {"w0": TamperLog(2, {"outputs": [["x", 9]]})},
    "skips half its work": {"w2": Cheat(0.5, (MAP,))},
}

print(f"{'scenario':26} {'verdict':7} {'stage':14} {'blamed':10} re-executed")
for name, behaviors in scenarios.items():
    art = run_job(job, behaviors)
    rep = verify_job(wc, art)
    blamed = ",".join(sorted(rep.malicious_workers)) or "-"
    print(f"{name:26} {rep.decision:7} {rep.verdict.stage or '-':14} {blamed:10} "
          f"{rep.cost.records_reexecuted}/{rep.cost.records_total}")

###############################################################################
# Without the completeness check a worker that silently drops records but
# reports the rest correctly goes unnoticed.

art = run_job(job, scenarios["skips half its work"])
print("no reconcile:", verify_job(wc, art, reconcile=False).decision)
