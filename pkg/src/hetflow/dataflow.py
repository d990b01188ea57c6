"""Dataflow frontend: builds the task DAG, tracks futures, and streams
dependency-free tasks to an executor one by one.

The graph engine is a single serialized consumer of two event streams --
user submissions and executor completion callbacks -- hosted on the shared
event loop.  Futures may be read from any thread.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .core import TaskDescription, TaskResult, validate_task, validate_unique_uids
from .eventlog import DAG_BUILD_DONE, DAG_BUILD_START, SUBMIT_BEGIN, SUBMIT_END, WORKFLOW_UID

PENDING = "pending"
RESOLVED = "resolved"
FAILED = "failed"


class WorkflowError(Exception):
    pass


class CycleDetected(WorkflowError):
    def __init__(self, cycle: list):
        super().__init__("dependency cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class UnknownDependency(WorkflowError):
    def __init__(self, uid: str, dep: str):
        super().__init__(f"task {uid!r} depends on unknown uid {dep!r}")
        self.uid = uid
        self.dep = dep


class UnknownUid(WorkflowError):
    def __init__(self, uid: str):
        super().__init__(f"unknown uid {uid!r}")
        self.uid = uid


class FutureTimeout(Exception):
    pass


class Future:
    """Write-once result handle.  Resolves exactly once; reads block."""

    def __init__(self, uid: str):
        self.uid = uid
        self._state = PENDING
        self._result: TaskResult | None = None
        self._event = threading.Event()
        self._callbacks: list = []
        self._lock = threading.Lock()

    @property
    def state(self) -> str:
        return self._state

    def done(self) -> bool:
        return self._state != PENDING

    def _fire(self, state: str, result: TaskResult) -> None:
        with self._lock:
            if self._state != PENDING:
                raise RuntimeError(f"future {self.uid} already {self._state}")
            self._state = state
            self._result = result
            callbacks = list(self._callbacks)
            self._callbacks.clear()
        self._event.set()
        for cb in callbacks:
            cb(self)

    def resolve(self, result: TaskResult) -> None:
        self._fire(RESOLVED, result)

    def fail(self, result: TaskResult) -> None:
        self._fire(FAILED, result)

    def result(self, timeout: float | None = None) -> TaskResult:
        """Block the reader until resolution (or raise FutureTimeout)."""
        if not self._event.wait(timeout):
            raise FutureTimeout(f"future {self.uid} still pending after {timeout}s")
        assert self._result is not None
        return self._result

    def add_done_callback(self, cb) -> None:
        with self._lock:
            if self._state == PENDING:
                self._callbacks.append(cb)
                return
        cb(self)


@dataclass
class TaskGraph:
    """DAG over task uids with per-node unresolved-producer counters."""

    nodes: dict = field(default_factory=dict)        # uid -> TaskDescription
    consumers: dict = field(default_factory=dict)    # uid -> list of consumer uids
    pending_deps: dict = field(default_factory=dict)  # uid -> unresolved producer count
    order: dict = field(default_factory=dict)        # uid -> input position (stable tie-break)

    @property
    def edges(self) -> list:
        return [(p, c) for p, cs in self.consumers.items() for c in cs]


def build_graph(tasks: list[TaskDescription]) -> TaskGraph:
    """Validate the task list and assemble the dependency graph.

    Raises CycleDetected / UnknownDependency / WorkflowError (bad task or
    duplicate uid) before anything is submitted.
    """
    dupes = validate_unique_uids(tasks)
    if dupes:
        raise WorkflowError(f"duplicate task uids: {sorted(set(dupes))}")
    graph = TaskGraph()
    for i, t in enumerate(tasks):
        report = validate_task(t)
        if not report.ok:
            raise WorkflowError(f"invalid task {t.uid!r}: {report.violations}")
        graph.nodes[t.uid] = t
        graph.consumers[t.uid] = []
        graph.order[t.uid] = i
    for t in tasks:
        for dep in t.depends_on:
            if dep not in graph.nodes:
                raise UnknownDependency(t.uid, dep)
        graph.pending_deps[t.uid] = len(set(t.depends_on))
        for dep in set(t.depends_on):
            graph.consumers[dep].append(t.uid)
    cycle = _find_cycle(graph)
    if cycle:
        raise CycleDetected(cycle)
    return graph


def _find_cycle(graph: TaskGraph) -> list | None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = {uid: WHITE for uid in graph.nodes}
    parent: dict = {}
    for root in graph.nodes:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(graph.consumers[root]))]
        color[root] = GREY
        while stack:
            uid, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GREY:
                    cycle = [nxt, uid]
                    cur = uid
                    while cur != nxt:
                        cur = parent[cur]
                        cycle.append(cur)
                    cycle.reverse()
                    return cycle
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    parent[nxt] = uid
                    stack.append((nxt, iter(graph.consumers[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[uid] = BLACK
                stack.pop()
    return None


def resolve_dependencies(graph: TaskGraph, completed: str) -> list:
    """Decrement consumers of ``completed``; return those now at zero.

    Each edge is consumed once; calling again for the same completion is the
    caller's bug and trips the counter assertion.
    """
    if completed not in graph.nodes:
        raise UnknownUid(completed)
    ready = []
    for consumer in graph.consumers[completed]:
        graph.pending_deps[consumer] -= 1
        assert graph.pending_deps[consumer] >= 0, f"double decrement for {consumer}"
        if graph.pending_deps[consumer] == 0:
            ready.append(consumer)
    ready.sort(key=lambda uid: graph.order[uid])
    return ready


def propagate_failure(graph: TaskGraph, failed: str) -> set:
    """All transitive consumers of ``failed`` (excluding it)."""
    if failed not in graph.nodes:
        raise UnknownUid(failed)
    seen: set = set()
    stack = list(graph.consumers[failed])
    while stack:
        uid = stack.pop()
        if uid in seen:
            continue
        seen.add(uid)
        stack.extend(graph.consumers[uid])
    return seen


class DataflowEngine:
    """Streams ready tasks to an executor and settles one future per task."""

    def __init__(self, executor, loop, log=None):
        self.executor = executor
        self.loop = loop
        self.log = log
        self.graph: TaskGraph | None = None
        self.futures: dict[str, Future] = {}
        self.submitted: set = set()
        self.terminal: set = set()
        self.submission_order: list = []

    # A workflow is finished when every task future settled.
    def done(self) -> bool:
        return bool(self.futures) and len(self.terminal) == len(self.futures)

    def submit_workflow(self, tasks: list[TaskDescription]) -> dict[str, Future]:
        """Validate, build the DAG, and return one pending future per task.

        Non-blocking: the initial ready set is streamed to the executor from
        the event loop; the rest follows as completions arrive.
        """
        if self.graph is not None:
            raise WorkflowError("engine already holds a workflow")
        self._mark(DAG_BUILD_START)
        graph = build_graph(tasks)
        self.graph = graph
        self.futures = {t.uid: Future(t.uid) for t in tasks}
        self._mark(DAG_BUILD_DONE)
        self.loop.post(self._submit_initial)
        return dict(self.futures)

    # -- loop-side ---------------------------------------------------------

    def _mark(self, state: str) -> None:
        if self.log is not None:
            self.log.append(self.loop.now_ms(), WORKFLOW_UID, state)

    def _submit_initial(self) -> None:
        assert self.graph is not None
        self._mark(SUBMIT_BEGIN)
        ready = [uid for uid in self.graph.nodes if self.graph.pending_deps[uid] == 0]
        ready.sort(key=lambda uid: self.graph.order[uid])
        for uid in ready:
            self._submit_one(uid)
        self._mark(SUBMIT_END)
        if not self.graph.nodes:
            return

    def _submit_one(self, uid: str) -> None:
        assert self.graph is not None
        assert uid not in self.submitted, f"{uid} submitted twice"
        assert self.graph.pending_deps[uid] == 0
        self.submitted.add(uid)
        self.submission_order.append(uid)
        try:
            exec_future = self.executor.submit(self.graph.nodes[uid])
        except Exception as exc:  # executor refused (e.g. gone at walltime)
            result = TaskResult(uid=uid, ok=False,
                                error=f"submission rejected: {exc}")
            self.terminal.add(uid)
            self.futures[uid].fail(result)
            self._fail_downstream(uid, result)
            return
        exec_future.add_done_callback(self._on_executor_done)

    def _on_executor_done(self, exec_future: Future) -> None:
        # Executor callbacks may fire on a foreign thread; marshal into the loop.
        self.loop.post(self._handle_completion, exec_future.uid, exec_future.result(0))

    def _handle_completion(self, uid: str, result: TaskResult) -> None:
        if uid in self.terminal:
            return
        self.terminal.add(uid)
        future = self.futures[uid]
        if result.ok:
            future.resolve(result)
            for ready in resolve_dependencies(self.graph, uid):
                self._submit_one(ready)
        else:
            future.fail(result)
            self._fail_downstream(uid, result)

    def _fail_downstream(self, failed: str, cause: TaskResult) -> None:
        for uid in sorted(propagate_failure(self.graph, failed), key=lambda u: self.graph.order[u]):
            if uid in self.terminal or uid in self.submitted:
                continue
            self.terminal.add(uid)
            self.futures[uid].fail(TaskResult(
                uid=uid, ok=False,
                error=f"dependency failed: {failed}: {cause.error}",
            ))

    def cancel_unfinished(self, reason: str = "executor shutdown") -> None:
        """Fail every unsettled future (executor went away mid-workflow)."""
        if self.graph is None:
            return
        for uid, future in self.futures.items():
            if uid in self.terminal:
                continue
            self.terminal.add(uid)
            future.fail(TaskResult(uid=uid, ok=False, error=f"canceled: {reason}"))


def submit_workflow(tasks, executor, loop, log=None) -> dict[str, Future]:
    """One-shot form of DataflowEngine.submit_workflow."""
    return DataflowEngine(executor, loop, log=log).submit_workflow(tasks)
