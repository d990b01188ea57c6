"""Run event log: newline-delimited `ts_ms,uid,state,node_list,core_count,gpu_count`.

One record per lifecycle transition plus framework markers (pilot, executor,
workflow).  node_list is `;`-joined node indices, empty when no placement is
attached.  The file is UTF-8, fields strictly in that order, so two runs with
the same virtual schedule serialize byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import TaskState

# Framework marker uids and states (non-task records).
PILOT_UID = "pilot"
EXECUTOR_UID = "executor"
WORKFLOW_UID = "workflow"

PILOT_STARTING = "PILOT_STARTING"
PILOT_STARTED = "PILOT_STARTED"
PILOT_STOPPING = "PILOT_STOPPING"
PILOT_STOPPED = "PILOT_STOPPED"
EXEC_STARTING = "EXEC_STARTING"
EXEC_READY = "EXEC_READY"
EXEC_STOPPING = "EXEC_STOPPING"
EXEC_STOPPED = "EXEC_STOPPED"
DAG_BUILD_START = "DAG_BUILD_START"
DAG_BUILD_DONE = "DAG_BUILD_DONE"
SUBMIT_BEGIN = "SUBMIT_BEGIN"
SUBMIT_END = "SUBMIT_END"

MARKER_STATES = {
    PILOT_STARTING, PILOT_STARTED, PILOT_STOPPING, PILOT_STOPPED,
    EXEC_STARTING, EXEC_READY, EXEC_STOPPING, EXEC_STOPPED,
    DAG_BUILD_START, DAG_BUILD_DONE, SUBMIT_BEGIN, SUBMIT_END,
}
TASK_STATES = {s.value for s in TaskState}
KNOWN_STATES = MARKER_STATES | TASK_STATES


@dataclass(frozen=True)
class EventRecord:
    ts_ms: int
    uid: str
    state: str
    nodes: tuple = ()
    cores: int = 0
    gpus: int = 0

    def to_line(self) -> str:
        node_list = ";".join(str(n) for n in self.nodes)
        return f"{self.ts_ms},{self.uid},{self.state},{node_list},{self.cores},{self.gpus}"


class MalformedLog(Exception):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


def parse_line(line: str, lineno: int = 0) -> EventRecord:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 6:
        raise MalformedLog(lineno, f"expected 6 fields, got {len(parts)}")
    ts_s, uid, state, node_list, cores_s, gpus_s = parts
    try:
        ts = int(ts_s)
        cores = int(cores_s)
        gpus = int(gpus_s)
    except ValueError as exc:
        raise MalformedLog(lineno, f"non-integer field: {exc}") from None
    if not uid:
        raise MalformedLog(lineno, "empty uid")
    if state not in KNOWN_STATES:
        raise MalformedLog(lineno, f"unknown state {state!r}")
    nodes = tuple(int(n) for n in node_list.split(";")) if node_list else ()
    return EventRecord(ts_ms=ts, uid=uid, state=state, nodes=nodes, cores=cores, gpus=gpus)


class EventLog:
    """Append-only in-process event store, flushable to the text format."""

    def __init__(self):
        self.records: list[EventRecord] = []
        self._closed = False

    def append(self, ts_ms: int, uid: str, state: str,
               nodes: tuple = (), cores: int = 0, gpus: int = 0) -> EventRecord:
        if self._closed:
            raise RuntimeError("event log is closed")
        rec = EventRecord(ts_ms, uid, state, tuple(nodes), cores, gpus)
        self.records.append(rec)
        return rec

    def close(self) -> None:
        self._closed = True

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def to_text(self) -> str:
        return "".join(rec.to_line() + "\n" for rec in self.records)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def read_log(path) -> list[EventRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(parse_line(line, lineno))
    return records


def parse_text(text: str) -> list[EventRecord]:
    return [parse_line(line, i) for i, line in enumerate(text.splitlines(), start=1) if line.strip()]
