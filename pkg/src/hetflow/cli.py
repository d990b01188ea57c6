"""Command-line driver.

Subcommands:
  run <file>        execute a workflow file end to end
  gen <experiment>  write a synthetic benchmark workflow file
  bench <sweep>     run a node sweep and emit aggregated rows
  report <events>   recompute metrics from an event log

Exit codes: 0 success (run: all tasks DONE), 1 execution failure,
2 parse/usage errors.  HETFLOW_OUT sets the default output directory.
"""

from __future__ import annotations

import argparse
import os
import sys

from .bench import SweepError, load_sweep, run_sweep, write_sweep_csv
from .dataflow import WorkflowError
from .eventlog import MalformedLog, read_log
from .generators import GENERATORS
from .metrics import compute_metrics, compute_utilization, emit_report
from .pilot import LauncherModel
from .runner import OUTPUT_DIR_ENV, run_workflow
from .workflow import WorkflowParseError, load_workflow, save_workflow

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_PARSE = 2


def _out_dir(args) -> str:
    return args.out_dir or os.environ.get(OUTPUT_DIR_ENV) or "."


def cmd_run(args) -> int:
    try:
        wf = load_workflow(args.workflow)
    except WorkflowParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        outcome = run_workflow(wf, out_dir=_out_dir(args))
    except WorkflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    done = sum(1 for r in outcome.results.values() if r.ok)
    print(f"{wf.run.run_id}: {done}/{len(outcome.results)} tasks done, "
          f"tpt={outcome.metrics.tpt_s:.3f}s ts={outcome.metrics.ts_per_s:.3f}/s "
          f"ttx={outcome.metrics.ttx_s:.3f}s")
    if outcome.log_path:
        print(f"event log: {outcome.log_path}")
    if outcome.report_path:
        print(f"report: {outcome.report_path}")
    if not outcome.ok:
        for uid, res in outcome.results.items():
            if not res.ok:
                print(f"failed: {uid}: {res.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _launcher_from_args(args) -> LauncherModel:
    return LauncherModel(kind=args.launcher, latency_s=args.latency)


def cmd_gen(args) -> int:
    gen = GENERATORS[args.experiment]
    kwargs = {
        "launcher": _launcher_from_args(args),
        "seed": args.seed,
        "clock": args.clock,
    }
    if args.experiment == "exp1":
        kwargs.update(scaling=args.scaling, cores_per_node=args.cores_per_node,
                      tasks_per_node=args.tasks_per_node,
                      total_tasks=args.total_tasks, duration_s=args.duration)
    elif args.experiment == "colmena":
        kwargs.update(triples_per_node=args.triples_per_node,
                      cores_per_node=args.cores_per_node,
                      sim_duration_s=args.duration,
                      pre_duration_s=args.pre_duration,
                      post_duration_s=args.post_duration)
    else:  # iwp
        kwargs.update(tasks_per_node=args.tasks_per_node,
                      cores_per_node=args.cores_per_node,
                      gpus_per_node=args.gpus_per_node,
                      ranks_per_task=args.ranks_per_task,
                      gpus_per_task=args.gpus_per_task,
                      duration_s=args.duration)
    try:
        wf = gen(args.nodes, **kwargs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    path = args.output if os.path.isabs(args.output) else os.path.join(_out_dir(args), args.output)
    save_workflow(wf, path)
    print(f"wrote {path} ({len(wf.tasks)} tasks, {wf.pilot.nodes} nodes)")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        spec = load_sweep(args.sweep)
    except SweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        rows = run_sweep(spec, out_dir=_out_dir(args))
    except Exception as exc:
        print(f"error: sweep failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    report = spec.get("report_path") or args.output
    path = report if os.path.isabs(report) else os.path.join(_out_dir(args), report)
    write_sweep_csv(rows, path)
    for row in rows:
        print(f"N={row.n_nodes:4d} tasks={row.n_tasks:6d} "
              f"tpt={row.tpt_mean_s:.3f}±{row.tpt_std_s:.3f}s "
              f"ts={row.ts_mean:.3f}±{row.ts_std:.3f}/s")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        records = read_log(args.events)
        metrics = compute_metrics(records, run_id=args.run_id, clock=args.clock)
        util = compute_utilization(records)
    except (OSError, MalformedLog) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    path = args.output if os.path.isabs(args.output) else os.path.join(_out_dir(args), args.output)
    emit_report(metrics, util, fmt=args.format, path=path)
    print(f"{metrics.run_id}: tasks={metrics.n_tasks} tpt={metrics.tpt_s:.3f}s "
          f"ts={metrics.ts_per_s:.3f}/s ttx={metrics.ttx_s:.3f}s")
    print(f"utilization: scheduled={util.scheduled_cs:.3f} "
          f"launching={util.launching_cs:.3f} running={util.running_cs:.3f} "
          f"idle={util.idle_cs:.3f} (core-s)")
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetflow",
                                     description="heterogeneous workflow engine")
    parser.add_argument("--out-dir", default=None,
                        help=f"output directory (default ${OUTPUT_DIR_ENV} or .)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a workflow file")
    p_run.add_argument("workflow")
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen", help="generate a benchmark workflow file")
    p_gen.add_argument("experiment", choices=sorted(GENERATORS))
    p_gen.add_argument("-o", "--output", required=True)
    p_gen.add_argument("--nodes", type=int, default=4)
    p_gen.add_argument("--cores-per-node", type=int, default=8)
    p_gen.add_argument("--gpus-per-node", type=int, default=4)
    p_gen.add_argument("--scaling", choices=["weak", "strong"], default="weak")
    p_gen.add_argument("--tasks-per-node", type=int, default=8)
    p_gen.add_argument("--total-tasks", type=int, default=256)
    p_gen.add_argument("--triples-per-node", type=int, default=5)
    p_gen.add_argument("--ranks-per-task", type=int, default=8)
    p_gen.add_argument("--gpus-per-task", type=int, default=2)
    p_gen.add_argument("--duration", type=float, default=0.5,
                       help="main task duration in seconds (scaled payload)")
    p_gen.add_argument("--pre-duration", type=float, default=0.1)
    p_gen.add_argument("--post-duration", type=float, default=0.1)
    p_gen.add_argument("--launcher", choices=["instant", "fixed_latency", "serialized"],
                       default="instant")
    p_gen.add_argument("--latency", type=float, default=0.0,
                       help="launcher latency L in seconds")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--clock", choices=["virtual", "real"], default="virtual")
    p_gen.set_defaults(func=cmd_gen)

    p_bench = sub.add_parser("bench", help="run a sweep spec")
    p_bench.add_argument("sweep")
    p_bench.add_argument("-o", "--output", default="sweep_report.csv")
    p_bench.set_defaults(func=cmd_bench)

    p_report = sub.add_parser("report", help="recompute metrics from an event log")
    p_report.add_argument("events")
    p_report.add_argument("-o", "--output", default="report.csv")
    p_report.add_argument("--format", choices=["csv", "json"], default="csv")
    p_report.add_argument("--run-id", default="run")
    p_report.add_argument("--clock", choices=["virtual", "real"], default="virtual")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
