"""Command-line front end: ``vmr gen | run | verify | report | cfg``.

Exit codes: 0 ACCEPT / success, 1 REJECT, 2 usage or config error,
3 program (IR) error, 4 corrupt artifacts layout.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import programs
from .cfg import build_cfg, to_dot
from .cluster import (
    HONEST,
    Cheat,
    Collude,
    JobSpec,
    LayoutError,
    OutputMutator,
    TamperLog,
    TamperOutput,
    TamperProgram,
    format_output_tsv,
    load_artifacts,
    run_job,
    sha256_hex,
    write_artifacts,
)
from .ir import IRSyntaxError, ValidationError
from .verifier import ACCEPT, verify_job
from .workloads import KINDS, WorkloadSpec, generate, read_jsonl, write_jsonl

EXIT_ACCEPT, EXIT_REJECT, EXIT_USAGE, EXIT_PROGRAM, EXIT_LAYOUT = 0, 1, 2, 3, 4

REPORT_COLUMNS = ("program", "records_total", "records_reexecuted", "instr_full", "instr_partial", "speedup")


class ConfigError(Exception):
    pass


class ProgramError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"vmr: {msg}", file=sys.stderr)


def _load_program(ref: str, base: Path | None = None):
    if not ref.startswith("builtin:") and base is not None and not Path(ref).is_absolute():
        ref = str(base / ref)
    try:
        return programs.load_program(ref)
    except FileNotFoundError:
        raise ConfigError(f"program not found: {ref}") from None
    except (IRSyntaxError, ValidationError) as exc:
        raise ProgramError(f"{ref}: {exc}") from None


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = WorkloadSpec(
        kind=args.kind,
        records=args.records,
        vocabulary=args.vocabulary,
        skew=args.skew,
        empty_fraction=args.empty_fraction,
        duplicate_fraction=args.duplicate_fraction,
        min_words=args.min_words,
        max_words=args.max_words,
        seed=args.seed,
    )
    try:
        records = generate(spec)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    write_jsonl(records, args.output)
    print(f"wrote {len(records)} records to {args.output}")
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {"program", "input", "workers", "chunk_size", "behaviors", "output", "rng_seed", "job_id"}


def _phases(d: dict, default):
    ph = d.get("phases", default)
    if isinstance(ph, str):
        ph = [ph]
    ph = tuple(p.upper() for p in ph)
    if not set(ph) <= {"MAP", "REDUCE"}:
        raise ConfigError(f"bad phases {ph}")
    return ph


def parse_behavior(d: dict, base: Path | None = None):
    if not isinstance(d, dict) or "type" not in d:
        raise ConfigError(f"behavior needs a 'type': {d!r}")
    kind = str(d["type"]).upper()
    allowed = {
        "HONEST": {"type"},
        "CHEAT": {"type", "skip_fraction", "phases"},
        "TAMPER_PROGRAM": {"type", "program", "phases"},
        "COLLUDE": {"type", "group_id", "program", "phases"},
        "TAMPER_OUTPUT": {"type", "field", "op", "operand", "phases"},
        "TAMPER_LOG": {"type", "entry_index", "rewrite", "phase"},
    }
    if kind not in allowed:
        raise ConfigError(f"unknown behavior type {d['type']!r}")
    extra = set(d) - allowed[kind]
    if extra:
        raise ConfigError(f"unknown keys for {kind}: {sorted(extra)}")
    if kind == "HONEST":
        return HONEST
    if kind == "CHEAT":
        return Cheat(float(d.get("skip_fraction", 0.5)), _phases(d, ("MAP", "REDUCE")))
    if kind == "TAMPER_PROGRAM":
        return TamperProgram(_load_program(d["program"], base), _phases(d, ("MAP", "REDUCE")))
    if kind == "COLLUDE":
        return Collude(str(d["group_id"]), _load_program(d["program"], base), _phases(d, ("MAP", "REDUCE")))
    if kind == "TAMPER_OUTPUT":
        mut = OutputMutator(d.get("field", "value"), d.get("op", "add"), d.get("operand", 1))
        if mut.field not in ("key", "value") or mut.op not in ("set", "add", "append"):
            raise ConfigError(f"bad output mutator {d!r}")
        return TamperOutput(mut, _phases(d, ("MAP",)))
    return TamperLog(int(d["entry_index"]), dict(d.get("rewrite", {})), _phases(d, ("MAP",))[0])


def load_config(path: Path) -> dict:
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("program", "input", "output"):
        if key not in cfg:
            raise ConfigError(f"missing config key {key!r}")
    return cfg


def cmd_run(args) -> int:
    path = Path(args.config)
    try:
        cfg = load_config(path)
        base = path.parent
        program = _load_program(cfg["program"], base)
        input_path = base / cfg["input"]
        if not input_path.is_file():
            raise ConfigError(f"input not found: {input_path}")
        try:
            records = read_jsonl(input_path)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad input file: {exc}") from None
        spec = JobSpec(
            program=program,
            input=tuple(records),
            num_workers=int(cfg.get("workers", 3)),
            chunk_size=int(cfg.get("chunk_size", 10)),
            rng_seed=int(cfg.get("rng_seed", 0)),
            job_id=str(cfg.get("job_id", "job0")),
        )
        behaviors = {w: parse_behavior(b, base) for w, b in cfg.get("behaviors", {}).items()}
        art = run_job(spec, behaviors)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ProgramError as exc:
        _err(str(exc))
        return EXIT_PROGRAM
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    out = write_artifacts(art, base / cfg["output"])
    print(f"artifacts: {out}")
    print(f"output digest: {sha256_hex(format_output_tsv(art.final_output))}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    try:
        program = _load_program(args.program)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ProgramError as exc:
        _err(str(exc))
        return EXIT_PROGRAM
    try:
        art = load_artifacts(args.artifacts)
    except LayoutError as exc:
        _err(str(exc))
        return EXIT_LAYOUT
    report = verify_job(program, art, reconcile=not args.no_reconcile)
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_json(include_timing=args.timing), indent=1, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    print(report.summary())
    return EXIT_ACCEPT if report.decision == ACCEPT else EXIT_REJECT


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def report_row(d: dict) -> list:
    cost = d["cost"]
    sp = cost["speedup"]
    return [
        d["program"],
        int(cost["records_total"]),
        int(cost["records_reexecuted"]),
        int(cost["instr_full"]),
        int(cost["instr_partial"]),
        "" if sp is None else f"{float(sp):.2f}",
    ]


def cmd_report(args) -> int:
    rows = []
    for p in args.reports:
        try:
            rows.append(report_row(json.loads(Path(p).read_text(encoding="utf-8"))))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            _err(f"malformed report {p}: {exc}")
            return EXIT_USAGE
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        w = csv.writer(out, delimiter="\t" if args.format == "tsv" else ",", lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_cfg(args) -> int:
    try:
        program = _load_program(args.program)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ProgramError as exc:
        _err(str(exc))
        return EXIT_PROGRAM
    fn = program.map_fn if args.fn == "map" else program.reduce_fn
    sys.stdout.write(to_dot(build_cfg(fn), f"{program.name}_{args.fn}"))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vmr", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic input file (JSON Lines)")
    g.add_argument("--kind", choices=KINDS, default="wordcount")
    g.add_argument("--records", type=int, default=100)
    g.add_argument("--vocabulary", type=int, default=200)
    g.add_argument("--skew", type=float, default=1.1)
    g.add_argument("--empty-fraction", type=float, default=0.0)
    g.add_argument("--duplicate-fraction", type=float, default=0.0)
    g.add_argument("--min-words", type=int, default=1)
    g.add_argument("--max-words", type=int, default=12)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run a job on the simulated cluster")
    r.add_argument("config", help="JSON run configuration")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="verify job artifacts against the trusted program")
    v.add_argument("program", help="path to .mr file or builtin:<name>")
    v.add_argument("artifacts", help="job directory (job/<id>)")
    v.add_argument("--no-reconcile", action="store_true", help="skip the completeness check")
    v.add_argument("--report", help="write the JSON verification report here")
    v.add_argument("--timing", action="store_true", help="include wall times in the report")
    v.set_defaults(func=cmd_verify)

    rp = sub.add_parser("report", help="tabulate verification reports")
    rp.add_argument("reports", nargs="+")
    rp.add_argument("--format", choices=("csv", "tsv"), default="csv")
    rp.add_argument("-o", "--output")
    rp.set_defaults(func=cmd_report)

    c = sub.add_parser("cfg", help="print a function's CFG in DOT format")
    c.add_argument("program")
    c.add_argument("--fn", choices=("map", "reduce"), default="map")
    c.set_defaults(func=cmd_cfg)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
