r"""
How much re-execution is saved
==============================

Verify honest runs of the four bundled applications and compare the
instructions executed by partial re-execution with a full re-run.
"""

import numpy as np

from vmr import programs
from vmr.cluster import JobSpec, run_job
from vmr.verifier import verify_job
from vmr.workloads import WorkloadSpec, generate

cases = [
    ("wordcount", WorkloadSpec("wordcount", records=3000, vocabulary=1000, empty_fraction=0.1,
                               duplicate_fraction=0.2, seed=1)),
    ("invertedindex", WorkloadSpec("docset", records=1000, vocabulary=1000, empty_fraction=0.1, seed=1)),
    ("hitcount", WorkloadSpec("weblog", records=5000, vocabulary=300, skew=1.2, seed=1)),
    ("frequency", WorkloadSpec("hits", records=1000, vocabulary=300, seed=1)),
]

rows = []
for app, spec in cases:
    p = programs.load(app)
    rep = verify_job(p, run_job(JobSpec(p, tuple(generate(spec)), num_workers=4, chunk_size=50)))
    c = rep.cost
    rows.append((c.records_total, c.records_reexecuted, c.instr_full, c.instr_partial))
    print(f"{app:14} {rep.decision} records {c.records_total:6d} -> {c.records_reexecuted:6d}  "
          f"skipped silent {c.records_skipped_no_output:5d} dup {c.records_skipped_dedup:5d}  "
          f"instr {c.instr_full:8d} -> {c.instr_partial:8d}  speedup {c.speedup:.2f}")

###############################################################################
# HitCount gains most: Zipf-distributed urls repeat whole log lines, and
# lines with a non-200 status never reach an emit.

t = np.array(rows, dtype=float)
print("fraction of records re-executed:", np.round(t[:, 1] / t[:, 0], 3))
