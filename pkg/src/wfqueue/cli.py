"""Command line: ``bench``, ``simulate`` and ``check``.

Exit codes follow the checker: 0 for success, 1 when a run fails or a
history is rejected, 2 for bad input.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Optional, Sequence, TextIO

from .bench import CSV_COLUMNS, BenchConfig, run_native, table_rows
from .checker import check
from .harness import (
    CasAdversary,
    RandomSchedule,
    SimConfig,
    all_programs,
    check_terminal,
    explore,
    make_programs,
    run_schedule,
)
from .history import History, MalformedHistory

MUTANTS = ("none", "single-refresh", "no-help-advance")


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _fraction(text: str) -> float:
    x = float(text)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return x


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfqueue", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, p_many: bool = False) -> None:
        if p_many:
            sp.add_argument("--p", type=_positive, nargs="+", default=[1, 2, 4, 8], help="process counts")
        else:
            sp.add_argument("--p", type=_positive, default=2, help="number of processes")
        sp.add_argument("--ops", type=int, default=None, help="operations per process")
        sp.add_argument("--variant", choices=("unbounded", "bounded"), default="unbounded")
        sp.add_argument("--gc-constant", type=_positive, default=None, help="GC period G (bounded)")
        sp.add_argument("--enq-fraction", type=_fraction, default=0.5)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", type=Path, default=None)

    bench = sub.add_parser("bench", help="native-thread workload, CSV metrics table")
    common(bench, p_many=True)
    bench.add_argument("--prefill", type=int, default=0, help="enqueues done before the threads start")

    sim = sub.add_parser("simulate", help="simulated runs with invariant hooks and the checker")
    common(sim)
    sim.add_argument("--schedule", choices=("random", "adversarial", "exhaustive"), default="random")
    sim.add_argument("--exhaustive", action="store_const", const="exhaustive", dest="schedule")
    sim.add_argument("--switch-prob", type=_fraction, default=0.5)
    sim.add_argument("--runs", type=_positive, default=1, help="random runs, seeds seed..seed+runs-1")
    sim.add_argument("--mutant", choices=MUTANTS, default="none", help="disable part of the algorithm")
    sim.add_argument(
        "--all-programs",
        action="store_true",
        help="exhaustive: every program set with up to --ops operations per process",
    )
    sim.add_argument("--replay", default=None, help="comma-separated process ids to run instead")

    chk = sub.add_parser("check", help="check a recorded history for FIFO linearizability")
    chk.add_argument("history", type=Path)
    return parser


# -- bench ---------------------------------------------------------------------


def cmd_bench(args: argparse.Namespace, out: TextIO) -> int:
    ops = 100 if args.ops is None else args.ops
    rows = []
    for p in args.p:
        cfg = BenchConfig(p, ops, args.variant, args.gc_constant, args.enq_fraction, args.seed, args.prefill)
        try:
            cfg.validate()
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        rows += table_rows(run_native(cfg))
    if args.out is not None:
        with open(args.out, "w", newline="") as fh:
            _write_csv(rows, fh)
    else:
        _write_csv(rows, out)
    return 0


def _write_csv(rows: list[dict], fh: TextIO) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)


# -- simulate ------------------------------------------------------------------


def _sim_config(args: argparse.Namespace) -> SimConfig:
    return SimConfig(
        gc_period=args.gc_constant,
        double_refresh=args.mutant != "single-refresh",
        help_advance=args.mutant != "no-help-advance",
    )


def _replay_hint(args: argparse.Namespace, ops: int, seed: int, trace: Sequence[int]) -> str:
    parts = [f"wfqueue simulate --p {args.p} --ops {ops} --variant {args.variant}"]
    if args.gc_constant is not None:
        parts.append(f"--gc-constant {args.gc_constant}")
    if args.mutant != "none":
        parts.append(f"--mutant {args.mutant}")
    parts.append(f"--enq-fraction {args.enq_fraction} --seed {seed}")
    parts.append(f"--replay {','.join(map(str, trace))}")
    return "replay: " + " ".join(parts)


def cmd_simulate(args: argparse.Namespace, out: TextIO) -> int:
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
    if args.schedule == "exhaustive":
        return _simulate_exhaustive(args, out)
    return _simulate_random(args, out)


def _simulate_random(args: argparse.Namespace, out: TextIO) -> int:
    ops = 4 if args.ops is None else args.ops
    config = _sim_config(args)
    failed = 0
    for seed in range(args.seed, args.seed + args.runs):
        programs = make_programs(args.p, ops, args.enq_fraction, seed)
        if args.replay is not None:
            schedule = [int(x) for x in args.replay.split(",") if x.strip()]
        elif args.schedule == "adversarial":
            schedule = CasAdversary(seed, nap=0.5)
        else:
            schedule = RandomSchedule(seed, args.switch_prob)
        try:
            result = run_schedule(programs, schedule, args.variant, config)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        verdict = check(result.history)
        ok = result.report.ok and verdict.accepted
        if args.out is not None:
            with open(args.out / f"history-{seed}.jsonl", "w") as fh:
                result.history.dump(fh)
            (args.out / f"metrics-{seed}.txt").write_text(result.metrics.to_text())
        if ok:
            if args.runs == 1:
                print(f"seed {seed}: {len(result.history)} ops, {result.metrics.steps} steps, pass", file=out)
            continue
        failed += 1
        print(f"seed {seed}: FAIL", file=out)
        if not result.report.ok:
            print(str(result.report), file=out)
        if not verdict:
            print(f"checker: {verdict.reason}", file=out)
        print(_replay_hint(args, ops, seed, result.schedule), file=out)
    if args.runs > 1:
        print(f"{args.runs - failed}/{args.runs} runs passed", file=out)
    return 1 if failed else 0


def _simulate_exhaustive(args: argparse.Namespace, out: TextIO) -> int:
    ops = 2 if args.ops is None else args.ops
    config = _sim_config(args)
    if args.all_programs:
        campaigns = list(all_programs(args.p, ops))
    else:
        campaigns = [make_programs(args.p, ops, args.enq_fraction, args.seed)]
    states = terminals = 0
    for programs in campaigns:
        result = explore(programs, args.variant, config, on_terminal=check_terminal)
        states += result.states
        terminals += result.terminals
        if not result.ok:
            trace, report = result.failures[0]
            print(f"programs {programs}: FAIL", file=out)
            print(str(report), file=out)
            if args.all_programs:
                print(f"schedule: {','.join(map(str, trace))}", file=out)
            else:
                print(_replay_hint(args, ops, args.seed, trace), file=out)
            return 1
    print(
        f"{len(campaigns)} program set(s), {states} states, {terminals} complete runs: all pass",
        file=out,
    )
    return 0


# -- check ---------------------------------------------------------------------


def cmd_check(args: argparse.Namespace, out: TextIO) -> int:
    try:
        with open(args.history) as fh:
            history = History.load(fh)
        verdict = check(history)
    except (OSError, MalformedHistory) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if verdict:
        print("accept", file=out)
        return 0
    print(f"reject: {verdict.reason}", file=out)
    return 1


def main(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None) -> int:
    args = build_parser().parse_args(argv)
    out = out or sys.stdout
    handler = {"bench": cmd_bench, "simulate": cmd_simulate, "check": cmd_check}[args.command]
    return handler(args, out)


if __name__ == "__main__":
    sys.exit(main())
