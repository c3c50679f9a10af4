"""Command-line interface: run, sweep, replay, acceptance."""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

from . import harness
from .engine import protocol_names
from .errors import ConfigurationError, ScenarioFileError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="byzpred",
        description="Byzantine agreement with classification predictions: "
        "deterministic round simulator and experiment harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a single sweep point")
    run_p.add_argument("file", help="scenario/sweep JSON file")
    run_p.add_argument("--index", type=int, default=0, help="point index within the sweep")
    run_p.add_argument("--seed", type=int, default=None, help="override the point's seed")
    run_p.add_argument("--output", default=None, help="write the record as a JSON line")

    sweep_p = sub.add_parser("sweep", help="execute the full cross-product of a sweep file")
    sweep_p.add_argument("file")
    sweep_p.add_argument("--output", default=None, help="records output path (JSON lines)")
    sweep_p.add_argument(
        "--workers",
        type=int,
        default=None,
        help=f"parallel workers (default: ${harness.WORKERS_ENV} or 1)",
    )
    sweep_p.add_argument(
        "--keep-going",
        action="store_true",
        help="do not abort on property violations (exit code still reflects them)",
    )

    replay_p = sub.add_parser("replay", help="re-execute records and compare byte-for-byte")
    replay_p.add_argument("records", help="records file produced by sweep")
    replay_p.add_argument("--index", type=int, default=None, help="record index (default: all)")

    acc_p = sub.add_parser("acceptance", help="run the acceptance criteria suite (pytest)")
    acc_p.add_argument("--pytest-args", default="", help="extra arguments passed to pytest")

    sub.add_parser("protocols", help="list registered protocols")
    return parser


def _cmd_run(args) -> int:
    doc = harness.load_sweep_file(args.file)
    points, skipped = harness.expand_sweep(doc)
    by_index = {p.index: p for p in points}
    if args.index not in by_index:
        reasons = {s.index: s.reason for s in skipped}
        if args.index in reasons:
            print(f"point {args.index} is infeasible: {reasons[args.index]}", file=sys.stderr)
        else:
            print(f"no point with index {args.index}", file=sys.stderr)
        return 1
    point = by_index[args.index]
    if args.seed is not None:
        point.scenario = point.scenario.__class__.from_json_dict(
            dict(point.scenario.to_json_dict(), seed=args.seed)
        )
    record = harness.run_point(point)
    line = harness.record_bytes(record).decode()
    if args.output:
        Path(args.output).write_text(line + "\n")
    print(line)
    if not record["ok"]:
        print("PROPERTY VIOLATION", file=sys.stderr)
        return 2
    return 0


def _cmd_sweep(args) -> int:
    doc = harness.load_sweep_file(args.file)

    def progress(record):
        status = "ok" if record["ok"] else "VIOLATION"
        print(
            f"[{record['index']}] n={record['scenario']['n']} "
            f"adv={record['scenario']['adversary']['name']} "
            f"rounds={record['rounds_elapsed']} {status}",
            file=sys.stderr,
        )

    try:
        records, summary = harness.run_sweep(
            doc,
            output_path=args.output,
            workers=args.workers,
            stop_on_violation=not args.keep_going,
            progress=progress,
        )
    except ConfigurationError as exc:
        print(f"sweep aborted: {exc}", file=sys.stderr)
        return 2
    print(summary.as_text())
    return 0 if summary.violations == 0 else 2


def _cmd_replay(args) -> int:
    records = harness.load_records(args.records)
    targets = records if args.index is None else [records[args.index]]
    bad = 0
    for record in targets:
        ok = harness.replay_record(record)
        print(f"record {record['index']}: {'reproduced' if ok else 'MISMATCH'}")
        bad += 0 if ok else 1
    return 0 if bad == 0 else 2


def _cmd_acceptance(args) -> int:
    test_file = Path(__file__).resolve().parents[2] / "tests" / "test_acceptance.py"
    if not test_file.exists():
        print(f"acceptance suite not found at {test_file}", file=sys.stderr)
        return 1
    cmd = [sys.executable, "-m", "pytest", str(test_file), "-v"]
    if args.pytest_args:
        cmd.extend(args.pytest_args.split())
    return subprocess.call(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "replay":
            return _cmd_replay(args)
        if args.command == "acceptance":
            return _cmd_acceptance(args)
        if args.command == "protocols":
            print("\n".join(protocol_names()))
            return 0
    except ScenarioFileError as exc:
        print(f"scenario file error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
