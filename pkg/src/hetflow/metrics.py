"""Metrics over run event logs.

* TPT: executor busy time -- the measure of the union of per-task busy
  spans (scheduled entry to running exit), which drops pilot idle gaps.
* TS: tasks per second, n_tasks / TPT.
* TTX: wall span from the first task submission to the last task terminal,
  idle and wait time included.
* runtime overhead: pilot (runtime system) bring-up.
* total overhead: runtime overhead plus executor bring-up beyond the pilot,
  DAG build, submission span, and executor shutdown.
* utilization: core-seconds split into Scheduled / Launching / Running /
  Idle; the four add up to total pilot core-seconds exactly (integer
  millisecond accounting underneath).

All functions are pure over the parsed log: recomputation is bit-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .core import TaskState, is_legal_transition
from .eventlog import (DAG_BUILD_DONE, DAG_BUILD_START, EXEC_READY,
                       EXEC_STARTING, EXEC_STOPPED, EXEC_STOPPING,
                       EventRecord, MalformedLog, PILOT_STARTED,
                       PILOT_STARTING, PILOT_STOPPED, SUBMIT_BEGIN,
                       SUBMIT_END, TASK_STATES)

CSV_COLUMNS = ("run_id", "n_nodes", "n_tasks", "tpt_s", "ts_per_s", "ttx_s",
               "rt_ovh_s", "total_ovh_s", "sched_cs", "launch_cs", "run_cs",
               "idle_cs")

_TERMINAL = {TaskState.DONE.value, TaskState.FAILED.value, TaskState.CANCELED.value}


@dataclass(frozen=True)
class RunMetrics:
    run_id: str
    n_nodes: int
    n_tasks: int
    tpt_s: float
    ts_per_s: float
    ttx_s: float
    runtime_overhead_s: float
    total_overhead_s: float
    clock: str = "virtual"


@dataclass(frozen=True)
class UtilizationBreakdown:
    scheduled_cs: float
    launching_cs: float
    running_cs: float
    idle_cs: float
    total_cs: float


@dataclass
class _TaskTimeline:
    states: dict          # state name -> ts_ms
    cores: int = 0
    gpus: int = 0
    nodes: tuple = ()


def validate_log(records: list[EventRecord]) -> dict:
    """Replay the log and check its structural invariants.

    Returns per-task timelines plus the marker timestamps; raises
    MalformedLog (1-based record index) on the first violation.
    """
    tasks: dict[str, _TaskTimeline] = {}
    markers: dict[str, int] = {}
    last_ts = None
    for lineno, rec in enumerate(records, start=1):
        if last_ts is not None and rec.ts_ms < last_ts:
            raise MalformedLog(lineno, f"timestamp regression {rec.ts_ms} < {last_ts}")
        last_ts = rec.ts_ms
        if rec.state in TASK_STATES:
            tl = tasks.setdefault(rec.uid, _TaskTimeline(states={}))
            if rec.state in tl.states:
                raise MalformedLog(lineno, f"{rec.uid} re-entered {rec.state}")
            if tl.states:
                prev_state = max(tl.states, key=lambda s: (tl.states[s], _order(s)))
                if not is_legal_transition(TaskState(prev_state), TaskState(rec.state)):
                    raise MalformedLog(
                        lineno, f"{rec.uid}: illegal {prev_state} -> {rec.state}")
            tl.states[rec.state] = rec.ts_ms
            if rec.state == TaskState.SCHEDULED.value:
                if rec.cores <= 0:
                    raise MalformedLog(lineno, f"{rec.uid} scheduled without cores")
                tl.cores = rec.cores
                tl.gpus = rec.gpus
                tl.nodes = rec.nodes
        else:
            if rec.state in markers:
                raise MalformedLog(lineno, f"duplicate marker {rec.state}")
            markers[rec.state] = rec.ts_ms
            if rec.state == PILOT_STARTED:
                markers["_pilot_cores"] = rec.cores
                markers["_pilot_gpus"] = rec.gpus
                markers["_pilot_nodes"] = len(rec.nodes)
    return {"tasks": tasks, "markers": markers}


_STATE_ORDER = {s.value: i for i, s in enumerate(TaskState)}


def _order(state: str) -> int:
    return _STATE_ORDER[state]


def _busy_spans(tasks: dict) -> list:
    spans = []
    for tl in tasks.values():
        sched = tl.states.get(TaskState.SCHEDULED.value)
        if sched is None:
            continue
        end = min((tl.states[s] for s in _TERMINAL if s in tl.states), default=None)
        if end is None:
            continue
        spans.append((sched, end))
    return spans


def union_measure_ms(spans: list) -> int:
    """Total measure of a union of [start, end] intervals."""
    total = 0
    last_end = None
    for start, end in sorted(spans):
        if last_end is None or start > last_end:
            total += end - start
            last_end = end
        elif end > last_end:
            total += end - last_end
            last_end = end
    return total


def compute_metrics(records: list[EventRecord], run_id: str = "run",
                    clock: str = "virtual") -> RunMetrics:
    """Compute throughput and overhead figures from one validated log."""
    replay = validate_log(records)
    tasks = replay["tasks"]
    markers = replay["markers"]

    submitted = [tl.states[TaskState.SUBMITTED.value] for tl in tasks.values()
                 if TaskState.SUBMITTED.value in tl.states]
    terminals = [ts for tl in tasks.values()
                 for s, ts in tl.states.items() if s in _TERMINAL]
    ttx_ms = (max(terminals) - min(submitted)) if submitted and terminals else 0
    tpt_ms = union_measure_ms(_busy_spans(tasks))

    runtime_ms = markers.get(PILOT_STARTED, 0) - markers.get(PILOT_STARTING, 0)
    exec_start_ms = markers.get(EXEC_READY, 0) - markers.get(EXEC_STARTING, 0)
    dag_ms = markers.get(DAG_BUILD_DONE, 0) - markers.get(DAG_BUILD_START, 0)
    submit_ms = markers.get(SUBMIT_END, 0) - markers.get(SUBMIT_BEGIN, 0)
    stop_ms = markers.get(EXEC_STOPPED, 0) - markers.get(EXEC_STOPPING, 0)
    total_ms = runtime_ms + max(0, exec_start_ms - runtime_ms) + dag_ms + submit_ms + stop_ms

    n_tasks = len(tasks)
    tpt_s = tpt_ms / 1000.0
    return RunMetrics(
        run_id=run_id,
        n_nodes=markers.get("_pilot_nodes", 0),
        n_tasks=n_tasks,
        tpt_s=tpt_s,
        ts_per_s=(n_tasks / tpt_s) if tpt_ms > 0 else 0.0,
        ttx_s=ttx_ms / 1000.0,
        runtime_overhead_s=runtime_ms / 1000.0,
        total_overhead_s=total_ms / 1000.0,
        clock=clock,
    )


def utilization_core_ms(records: list[EventRecord]) -> dict:
    """Exact integer core-millisecond accounting over the pilot's active
    window; the four states always sum to the total by construction of the
    idle remainder, and the non-idle integrals come from per-task phase
    intervals."""
    replay = validate_log(records)
    tasks = replay["tasks"]
    markers = replay["markers"]
    if PILOT_STARTED not in markers or PILOT_STOPPED not in markers:
        raise MalformedLog(0, "utilization needs pilot start/stop markers")
    window = (markers[PILOT_STARTED], markers[PILOT_STOPPED])
    total_cores = markers.get("_pilot_cores", 0)
    total_cms = total_cores * (window[1] - window[0])

    sched_cms = launch_cms = run_cms = 0
    for tl in tasks.values():
        states = tl.states
        sched = states.get(TaskState.SCHEDULED.value)
        if sched is None:
            continue
        launch = states.get(TaskState.LAUNCHING.value)
        run = states.get(TaskState.RUNNING.value)
        end = min((states[s] for s in _TERMINAL if s in states), default=None)
        if end is None:
            raise MalformedLog(0, "scheduled task without terminal state")
        # Consecutive phase boundaries; a missing phase gets a zero span.
        launch_at = launch if launch is not None else end
        run_at = run if run is not None else end
        sched_cms += tl.cores * (launch_at - sched)
        launch_cms += tl.cores * (run_at - launch_at)
        run_cms += tl.cores * (end - run_at)

    idle_cms = total_cms - sched_cms - launch_cms - run_cms
    if idle_cms < 0:
        raise MalformedLog(0, f"oversubscribed log: idle {idle_cms} core-ms")
    return {"scheduled": sched_cms, "launching": launch_cms, "running": run_cms,
            "idle": idle_cms, "total": total_cms}


def compute_utilization(records: list[EventRecord]) -> UtilizationBreakdown:
    """Per-slot state integrals over the pilot window, in core-seconds."""
    cms = utilization_core_ms(records)
    return UtilizationBreakdown(
        scheduled_cs=cms["scheduled"] / 1000.0,
        launching_cs=cms["launching"] / 1000.0,
        running_cs=cms["running"] / 1000.0,
        idle_cs=cms["idle"] / 1000.0,
        total_cs=cms["total"] / 1000.0,
    )


# -- report emission ----------------------------------------------------------


class IoFailure(Exception):
    pass


def _format_row(metrics: RunMetrics, util: UtilizationBreakdown) -> list:
    return [
        metrics.run_id,
        str(metrics.n_nodes),
        str(metrics.n_tasks),
        f"{metrics.tpt_s:.3f}",
        repr(metrics.ts_per_s),
        f"{metrics.ttx_s:.3f}",
        f"{metrics.runtime_overhead_s:.3f}",
        f"{metrics.total_overhead_s:.3f}",
        f"{util.scheduled_cs:.3f}",
        f"{util.launching_cs:.3f}",
        f"{util.running_cs:.3f}",
        f"{util.idle_cs:.3f}",
    ]


def emit_report(metrics: RunMetrics, util: UtilizationBreakdown,
                fmt: str = "csv", path: str = "report.csv") -> str:
    """Append one run's row to a CSV or JSON report file."""
    try:
        if fmt == "csv":
            fresh = not os.path.exists(path) or os.path.getsize(path) == 0
            with open(path, "a", encoding="utf-8") as fh:
                if fresh:
                    fh.write(",".join(CSV_COLUMNS) + "\n")
                fh.write(",".join(_format_row(metrics, util)) + "\n")
        elif fmt == "json":
            doc = {"runs": []}
            if os.path.exists(path) and os.path.getsize(path) > 0:
                with open(path, encoding="utf-8") as fh:
                    doc = json.load(fh)
            doc["runs"].append(report_json_entry(metrics, util))
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True)
                fh.write("\n")
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return path


def report_json_entry(metrics: RunMetrics, util: UtilizationBreakdown) -> dict:
    return {
        "run_id": metrics.run_id,
        "clock": metrics.clock,
        "n_nodes": metrics.n_nodes,
        "n_tasks": metrics.n_tasks,
        "tpt_s": metrics.tpt_s,
        "ts_per_s": metrics.ts_per_s,
        "ttx_s": metrics.ttx_s,
        "rt_ovh_s": metrics.runtime_overhead_s,
        "total_ovh_s": metrics.total_overhead_s,
        "sched_cs": util.scheduled_cs,
        "launch_cs": util.launching_cs,
        "run_cs": util.running_cs,
        "idle_cs": util.idle_cs,
    }


def parse_report_csv(path: str) -> list:
    """Read rows back as (RunMetrics, UtilizationBreakdown) pairs."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if tuple(header) != CSV_COLUMNS:
            raise IoFailure(f"unexpected report columns: {header}")
        for line in fh:
            if not line.strip():
                continue
            vals = line.rstrip("\n").split(",")
            metrics = RunMetrics(
                run_id=vals[0], n_nodes=int(vals[1]), n_tasks=int(vals[2]),
                tpt_s=float(vals[3]), ts_per_s=float(vals[4]),
                ttx_s=float(vals[5]), runtime_overhead_s=float(vals[6]),
                total_overhead_s=float(vals[7]),
            )
            sched, launch, run, idle = (float(v) for v in vals[8:12])
            util = UtilizationBreakdown(
                scheduled_cs=sched, launching_cs=launch, running_cs=run,
                idle_cs=idle, total_cs=sched + launch + run + idle,
            )
            rows.append((metrics, util))
    return rows
