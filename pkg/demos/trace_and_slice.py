r"""
Tracing and slicing WordCount
=============================

Run the WordCount mapper on a few lines, look at the block traces it
leaves behind, and see what the slicer keeps for each control-flow group.
"""

from vmr import programs
from vmr.cfg import build_cfg, contributes_output, to_dot
from vmr.ir import MAP, format_instruction, serialize_function
from vmr.runtime import InstanceInput, exec_map, exec_tainted
from vmr.verifier import slice_program

wc = programs.load("wordcount")
print(serialize_function(wc.map_fn))
print(to_dot(build_cfg(wc.map_fn), "wordcount_map"))

###############################################################################
# Every instance records the blocks it entered after the entry block.
# Lines with the same number of words share a trace.

g = build_cfg(wc.map_fn)
for line in ["test", "test input", "", "hello world"]:
    r = exec_map(wc, InstanceInput.map(0, line))
    print(f"{line!r:14} cft={list(r.cft)} outputs={list(r.outputs)} emits={contributes_output(g, r.cft)}")

###############################################################################
# Taint starts at the key and value registers.  The ``const 1`` site never
# sees input data, so it is the only candidate for folding.

res, report = exec_tainted(wc, InstanceInput.map(0, "test input"))
for site, ins in wc.map_fn.sites():
    info = report.sites.get(site)
    if info is not None:
        tag = "tainted" if info.tainted else f"untainted {sorted(info.observed.values())}"
        print(f"bb{site[0]}[{site[1]}] {format_instruction(ins):24} x{info.exec_count} {tag}")

sl = slice_program(wc, MAP, report)
for site, (decision, value) in sorted(sl.elimination_map.items()):
    print(site, decision, "" if value is None else value)
