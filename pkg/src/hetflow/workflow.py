"""Workflow file format: a strict JSON document with pilot geometry,
bridge defaults, a run section, and the task array.

Unknown fields are rejected everywhere so a typo cannot silently change an
experiment.  Serialization is canonical (sorted keys, fixed indent), which
makes generator output byte-reproducible for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .bridge import BridgeConfig
from .core import ExecutableSpec, FunctionRef, TaskDescription, TaskKind
from .pilot import LauncherModel, PilotDescription


class WorkflowParseError(Exception):
    pass


@dataclass(frozen=True)
class RunSection:
    clock: str = "virtual"
    seed: int = 0
    run_id: str = "run"
    log_path: str | None = None
    report_path: str | None = None
    report_format: str = "csv"
    funcpool_transport: str = "inproc"
    cancel_running_on_shutdown: bool = True


@dataclass
class WorkflowFile:
    pilot: PilotDescription
    bridge: BridgeConfig
    run: RunSection = RunSection()
    tasks: list = field(default_factory=list)


def _check_keys(obj: dict, allowed: set, required: set, ctx: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise WorkflowParseError(f"{ctx}: unknown fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise WorkflowParseError(f"{ctx}: missing fields {sorted(missing)}")


def _int(obj: dict, key: str, ctx: str, default=None):
    if key not in obj:
        return default
    val = obj[key]
    if not isinstance(val, int) or isinstance(val, bool):
        raise WorkflowParseError(f"{ctx}.{key}: expected integer, got {val!r}")
    return val


def _num(obj: dict, key: str, ctx: str, default=None):
    if key not in obj:
        return default
    val = obj[key]
    if not isinstance(val, (int, float)) or isinstance(val, bool):
        raise WorkflowParseError(f"{ctx}.{key}: expected number, got {val!r}")
    return float(val)


def _str(obj: dict, key: str, ctx: str, default=None):
    if key not in obj:
        return default
    val = obj[key]
    if not isinstance(val, str):
        raise WorkflowParseError(f"{ctx}.{key}: expected string, got {val!r}")
    return val


def _parse_launcher(obj: dict) -> LauncherModel:
    _check_keys(obj, {"kind", "latency_s"}, {"kind"}, "pilot.launcher")
    return LauncherModel(kind=_str(obj, "kind", "pilot.launcher"),
                         latency_s=_num(obj, "latency_s", "pilot.launcher", 0.0))


def _parse_pilot(obj: dict) -> PilotDescription:
    _check_keys(obj, {"nodes", "cores_per_node", "gpus_per_node", "walltime_s",
                      "launcher"}, {"nodes", "cores_per_node"}, "pilot")
    launcher = _parse_launcher(obj["launcher"]) if "launcher" in obj else LauncherModel()
    desc = PilotDescription(
        nodes=_int(obj, "nodes", "pilot"),
        cores_per_node=_int(obj, "cores_per_node", "pilot"),
        gpus_per_node=_int(obj, "gpus_per_node", "pilot", 0),
        walltime_s=_num(obj, "walltime_s", "pilot", 3600.0),
        launcher=launcher,
    )
    problems = desc.validate()
    if problems:
        raise WorkflowParseError(f"pilot: {problems}")
    return desc


_DEFAULTS_KEYS = {"ranks", "cores_per_rank", "gpus_per_rank",
                  "callback_queue_capacity", "pilot_startup_s",
                  "executor_startup_extra_s", "executor_teardown_s"}


def _parse_bridge(obj: dict, pilot: PilotDescription) -> BridgeConfig:
    _check_keys(obj, _DEFAULTS_KEYS, set(), "defaults")
    cfg = BridgeConfig(
        pilot=pilot,
        default_ranks=_int(obj, "ranks", "defaults", 1),
        default_cores_per_rank=_int(obj, "cores_per_rank", "defaults", 1),
        default_gpus_per_rank=_int(obj, "gpus_per_rank", "defaults", 0),
        callback_queue_capacity=_int(obj, "callback_queue_capacity", "defaults", 1024),
        pilot_startup_s=_num(obj, "pilot_startup_s", "defaults", 0.0),
        executor_startup_extra_s=_num(obj, "executor_startup_extra_s", "defaults", 0.0),
        executor_teardown_s=_num(obj, "executor_teardown_s", "defaults", 0.0),
    )
    problems = cfg.validate()
    if problems:
        raise WorkflowParseError(f"defaults: {problems}")
    return cfg


_RUN_KEYS = {"clock", "seed", "run_id", "log_path", "report_path",
             "report_format", "funcpool_transport", "cancel_running_on_shutdown"}


def _parse_run(obj: dict) -> RunSection:
    _check_keys(obj, _RUN_KEYS, set(), "run")
    clock = _str(obj, "clock", "run", "virtual")
    if clock not in ("virtual", "real"):
        raise WorkflowParseError(f"run.clock: expected 'virtual' or 'real', got {clock!r}")
    fmt = _str(obj, "report_format", "run", "csv")
    if fmt not in ("csv", "json"):
        raise WorkflowParseError(f"run.report_format: expected 'csv' or 'json', got {fmt!r}")
    cancel = obj.get("cancel_running_on_shutdown", True)
    if not isinstance(cancel, bool):
        raise WorkflowParseError("run.cancel_running_on_shutdown: expected boolean")
    return RunSection(
        clock=clock,
        seed=_int(obj, "seed", "run", 0),
        run_id=_str(obj, "run_id", "run", "run"),
        log_path=_str(obj, "log_path", "run"),
        report_path=_str(obj, "report_path", "run"),
        report_format=fmt,
        funcpool_transport=_str(obj, "funcpool_transport", "run", "inproc"),
        cancel_running_on_shutdown=cancel,
    )


_TASK_KEYS = {"uid", "kind", "function", "program", "args", "env", "ranks",
              "cores_per_rank", "gpus_per_rank", "gpus", "depends_on",
              "synthetic_duration"}


def _parse_task(obj: dict, idx: int) -> TaskDescription:
    ctx = f"tasks[{idx}]"
    _check_keys(obj, _TASK_KEYS, {"uid", "kind"}, ctx)
    uid = _str(obj, "uid", ctx)
    kind_s = _str(obj, "kind", ctx)
    if kind_s not in ("function", "executable"):
        raise WorkflowParseError(f"{ctx}.kind: expected 'function' or 'executable'")
    kind = TaskKind(kind_s)
    args = obj.get("args", [])
    if not isinstance(args, list):
        raise WorkflowParseError(f"{ctx}.args: expected list")
    if kind == TaskKind.FUNCTION:
        if "function" not in obj:
            raise WorkflowParseError(f"{ctx}: function tasks need a 'function' name")
        if "program" in obj or "env" in obj:
            raise WorkflowParseError(f"{ctx}: 'program'/'env' are executable-task fields")
        payload = FunctionRef(function=_str(obj, "function", ctx), args=tuple(args))
    else:
        if "program" not in obj:
            raise WorkflowParseError(f"{ctx}: executable tasks need a 'program' name")
        if "function" in obj:
            raise WorkflowParseError(f"{ctx}: 'function' is a function-task field")
        env = obj.get("env", {})
        if not isinstance(env, dict):
            raise WorkflowParseError(f"{ctx}.env: expected object")
        payload = ExecutableSpec(program=_str(obj, "program", ctx), args=tuple(args),
                                 env=tuple(sorted(env.items())))
    deps = obj.get("depends_on", [])
    if not isinstance(deps, list) or not all(isinstance(d, str) for d in deps):
        raise WorkflowParseError(f"{ctx}.depends_on: expected list of uids")
    return TaskDescription(
        uid=uid,
        kind=kind,
        payload=payload,
        ranks=_int(obj, "ranks", ctx),
        cores_per_rank=_int(obj, "cores_per_rank", ctx),
        gpus_per_rank=_int(obj, "gpus_per_rank", ctx),
        gpus=_int(obj, "gpus", ctx),
        depends_on=tuple(deps),
        synthetic_duration=_num(obj, "synthetic_duration", ctx),
    )


def parse_workflow(doc: dict) -> WorkflowFile:
    if not isinstance(doc, dict):
        raise WorkflowParseError("workflow document must be a JSON object")
    _check_keys(doc, {"pilot", "defaults", "run", "tasks"}, {"pilot", "tasks"}, "workflow")
    pilot = _parse_pilot(doc["pilot"])
    bridge = _parse_bridge(doc.get("defaults", {}), pilot)
    run = _parse_run(doc.get("run", {}))
    if not isinstance(doc["tasks"], list):
        raise WorkflowParseError("tasks: expected array")
    tasks = [_parse_task(t, i) for i, t in enumerate(doc["tasks"])]
    return WorkflowFile(pilot=pilot, bridge=bridge, run=run, tasks=tasks)


def load_workflow(path: str) -> WorkflowFile:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise WorkflowParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise WorkflowParseError(f"{path} is not valid JSON: {exc}") from exc
    return parse_workflow(doc)


# -- serialization -------------------------------------------------------------


def workflow_to_dict(wf: WorkflowFile) -> dict:
    doc: dict = {
        "pilot": {
            "nodes": wf.pilot.nodes,
            "cores_per_node": wf.pilot.cores_per_node,
            "gpus_per_node": wf.pilot.gpus_per_node,
            "walltime_s": wf.pilot.walltime_s,
            "launcher": {"kind": wf.pilot.launcher.kind,
                         "latency_s": wf.pilot.launcher.latency_s},
        },
        "defaults": {
            "ranks": wf.bridge.default_ranks,
            "cores_per_rank": wf.bridge.default_cores_per_rank,
            "gpus_per_rank": wf.bridge.default_gpus_per_rank,
            "callback_queue_capacity": wf.bridge.callback_queue_capacity,
            "pilot_startup_s": wf.bridge.pilot_startup_s,
            "executor_startup_extra_s": wf.bridge.executor_startup_extra_s,
            "executor_teardown_s": wf.bridge.executor_teardown_s,
        },
        "run": {
            "clock": wf.run.clock,
            "seed": wf.run.seed,
            "run_id": wf.run.run_id,
            "report_format": wf.run.report_format,
            "funcpool_transport": wf.run.funcpool_transport,
            "cancel_running_on_shutdown": wf.run.cancel_running_on_shutdown,
        },
        "tasks": [],
    }
    if wf.run.log_path is not None:
        doc["run"]["log_path"] = wf.run.log_path
    if wf.run.report_path is not None:
        doc["run"]["report_path"] = wf.run.report_path
    for t in wf.tasks:
        entry: dict = {"uid": t.uid, "kind": t.kind.value}
        if isinstance(t.payload, FunctionRef):
            entry["function"] = t.payload.function
            if t.payload.args:
                entry["args"] = list(t.payload.args)
        else:
            entry["program"] = t.payload.program
            if t.payload.args:
                entry["args"] = list(t.payload.args)
            if t.payload.env:
                entry["env"] = dict(t.payload.env)
        for attr in ("ranks", "cores_per_rank", "gpus_per_rank", "gpus"):
            val = getattr(t, attr)
            if val is not None:
                entry[attr] = val
        if t.depends_on:
            entry["depends_on"] = list(t.depends_on)
        if t.synthetic_duration is not None:
            entry["synthetic_duration"] = t.synthetic_duration
        doc["tasks"].append(entry)
    return doc


def save_workflow(wf: WorkflowFile, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(workflow_to_dict(wf), fh, indent=2, sort_keys=True)
        fh.write("\n")
