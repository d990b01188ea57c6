"""Benchmark driver: runs a generator across a node sweep in virtual time,
repeats each point, and emits mean/stddev rows (the scaling-table shape).
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass

from .generators import GENERATORS
from .pilot import LauncherModel
from .runner import run_workflow

SWEEP_KEYS = {"experiment", "scaling", "nodes", "repetitions", "params",
              "launcher", "report_path"}

AGG_COLUMNS = ("run_id", "n_nodes", "n_tasks", "repetitions",
               "tpt_mean_s", "tpt_std_s", "ts_mean", "ts_std",
               "ttx_mean_s", "ttx_std_s", "rt_ovh_mean_s", "rt_ovh_std_s",
               "total_ovh_mean_s", "total_ovh_std_s")


class SweepError(Exception):
    pass


@dataclass(frozen=True)
class SweepRow:
    run_id: str
    n_nodes: int
    n_tasks: int
    repetitions: int
    tpt_mean_s: float
    tpt_std_s: float
    ts_mean: float
    ts_std: float
    ttx_mean_s: float
    ttx_std_s: float
    rt_ovh_mean_s: float
    rt_ovh_std_s: float
    total_ovh_mean_s: float
    total_ovh_std_s: float


def parse_sweep(doc: dict) -> dict:
    unknown = set(doc) - SWEEP_KEYS
    if unknown:
        raise SweepError(f"unknown sweep fields {sorted(unknown)}")
    if "experiment" not in doc or doc["experiment"] not in GENERATORS:
        raise SweepError(f"sweep needs experiment in {sorted(GENERATORS)}")
    nodes = doc.get("nodes")
    if not isinstance(nodes, list) or not nodes or not all(
            isinstance(n, int) and n >= 1 for n in nodes):
        raise SweepError("sweep needs a non-empty integer 'nodes' list")
    reps = doc.get("repetitions", 1)
    if not isinstance(reps, int) or reps < 1:
        raise SweepError("repetitions must be a positive integer")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise SweepError("params must be an object")
    spec = {
        "experiment": doc["experiment"],
        "nodes": nodes,
        "repetitions": reps,
        "params": dict(params),
        "report_path": doc.get("report_path"),
    }
    if "scaling" in doc:
        spec["params"]["scaling"] = doc["scaling"]
    if "launcher" in doc:
        launcher = doc["launcher"]
        spec["params"]["launcher"] = LauncherModel(
            kind=launcher.get("kind", "instant"),
            latency_s=launcher.get("latency_s", 0.0))
    return spec


def _mean_std(values: list) -> tuple:
    if len(values) == 1:
        return values[0], 0.0
    return statistics.mean(values), statistics.pstdev(values)


def run_sweep(spec: dict, out_dir: str | None = None) -> list:
    """Run every (nodes, repetition) point and aggregate per node count."""
    gen = GENERATORS[spec["experiment"]]
    rows = []
    for n in spec["nodes"]:
        runs = []
        for _ in range(spec["repetitions"]):
            wf = gen(n, **spec["params"])
            runs.append(run_workflow(wf, out_dir=out_dir, write_outputs=False))
        metrics = [r.metrics for r in runs]
        tpt = _mean_std([m.tpt_s for m in metrics])
        ts = _mean_std([m.ts_per_s for m in metrics])
        ttx = _mean_std([m.ttx_s for m in metrics])
        rt = _mean_std([m.runtime_overhead_s for m in metrics])
        tot = _mean_std([m.total_overhead_s for m in metrics])
        rows.append(SweepRow(
            run_id=metrics[0].run_id,
            n_nodes=metrics[0].n_nodes,
            n_tasks=metrics[0].n_tasks,
            repetitions=spec["repetitions"],
            tpt_mean_s=tpt[0], tpt_std_s=tpt[1],
            ts_mean=ts[0], ts_std=ts[1],
            ttx_mean_s=ttx[0], ttx_std_s=ttx[1],
            rt_ovh_mean_s=rt[0], rt_ovh_std_s=rt[1],
            total_ovh_mean_s=tot[0], total_ovh_std_s=tot[1],
        ))
    return rows


def write_sweep_csv(rows: list, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(AGG_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join([
                row.run_id, str(row.n_nodes), str(row.n_tasks),
                str(row.repetitions),
                f"{row.tpt_mean_s:.3f}", f"{row.tpt_std_s:.3f}",
                repr(row.ts_mean), repr(row.ts_std),
                f"{row.ttx_mean_s:.3f}", f"{row.ttx_std_s:.3f}",
                f"{row.rt_ovh_mean_s:.3f}", f"{row.rt_ovh_std_s:.3f}",
                f"{row.total_ovh_mean_s:.3f}", f"{row.total_ovh_std_s:.3f}",
            ]) + "\n")


def load_sweep(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SweepError(f"cannot read sweep spec {path}: {exc}") from exc
    return parse_sweep(doc)
