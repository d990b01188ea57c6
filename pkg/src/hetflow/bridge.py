"""Bridge between the dataflow frontend and the pilot: implements the
executor contract, translates task descriptions 1:1 into workload records,
and maps pilot state callbacks back onto futures.

Callback delivery is at-least-once; the bridge deduplicates by
(uid, state) so futures settle exactly once.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .core import (ExecutableSpec, FunctionRef, TaskDescription, TaskKind,
                   TaskResult, TaskState, validate_task)
from .eventlog import (EXEC_READY, EXEC_STARTING, EXEC_STOPPED, EXEC_STOPPING,
                       EXECUTOR_UID, EventLog)
from .eventloop import EventLoop
from .dataflow import Future
from .pilot import (MODE_EXECUTABLE, MODE_FUNCTION, MODE_MPI_FUNCTION,
                    PilotAgent, PilotDescription, PilotError, WorkloadTask)
from . import payloads


class BridgeError(Exception):
    pass


class UnsupportedPayload(BridgeError):
    def __init__(self, uid: str, reason: str):
        super().__init__(f"task {uid}: {reason}")
        self.uid = uid
        self.reason = reason


class PilotStartupFailure(BridgeError):
    pass


class ExecutorNotReady(BridgeError):
    pass


@dataclass(frozen=True)
class BridgeConfig:
    """Executor configuration: the pilot to start, defaults for tasks that
    omit resource fields, and the modeled start/stop latencies that make
    overhead accounting reproducible in virtual time."""

    pilot: PilotDescription
    default_ranks: int = 1
    default_cores_per_rank: int = 1
    default_gpus_per_rank: int = 0
    callback_queue_capacity: int = 1024
    pilot_startup_s: float = 0.0
    executor_startup_extra_s: float = 0.0
    executor_teardown_s: float = 0.0

    def validate(self) -> list:
        problems = []
        if self.default_ranks < 1:
            problems.append("default ranks >= 1")
        if self.default_cores_per_rank < 1:
            problems.append("default cores_per_rank >= 1")
        if self.default_gpus_per_rank < 0:
            problems.append("default gpus_per_rank >= 0")
        if self.callback_queue_capacity < 1:
            problems.append("callback queue capacity >= 1")
        for name in ("pilot_startup_s", "executor_startup_extra_s", "executor_teardown_s"):
            if getattr(self, name) < 0:
                problems.append(f"{name} >= 0")
        return problems


def translate(desc: TaskDescription, cfg: BridgeConfig) -> WorkloadTask:
    """Map one task description to exactly one workload record (pure).

    Mode mapping is total over kind x rank-count: single-rank functions stay
    plain functions, multi-rank functions become group-executed functions,
    executables stay executables.
    """
    report = validate_task(desc)
    if not report.ok:
        raise ValueError(f"invalid task {desc.uid!r}: {report.violations}")
    ranks = desc.ranks if desc.ranks is not None else cfg.default_ranks
    cores_per_rank = (desc.cores_per_rank if desc.cores_per_rank is not None
                      else cfg.default_cores_per_rank)
    gpus_per_rank = (desc.gpus_per_rank if desc.gpus_per_rank is not None
                     else cfg.default_gpus_per_rank)
    gpus_total = desc.gpus if desc.gpus is not None else gpus_per_rank * ranks
    if desc.kind == TaskKind.FUNCTION:
        assert isinstance(desc.payload, FunctionRef)
        if desc.payload.function not in payloads.FUNCTIONS:
            raise UnsupportedPayload(desc.uid, f"unregistered function {desc.payload.function!r}")
        mode = MODE_MPI_FUNCTION if ranks > 1 else MODE_FUNCTION
        env: tuple = ()
    else:
        assert isinstance(desc.payload, ExecutableSpec)
        if desc.synthetic_duration is None and desc.payload.program not in payloads.PROGRAMS:
            raise UnsupportedPayload(desc.uid, f"unregistered program {desc.payload.program!r}")
        mode = MODE_EXECUTABLE
        env = tuple(desc.payload.env)
    duration_ms = (None if desc.synthetic_duration is None
                   else round(desc.synthetic_duration * 1000))
    return WorkloadTask(
        uid=desc.uid,
        mode=mode,
        payload=desc.payload,
        ranks=ranks,
        cores_per_rank=cores_per_rank,
        gpus_per_rank=gpus_per_rank,
        gpus_total=gpus_total,
        env=env,
        synthetic_duration_ms=duration_ms,
    )


def describe(task: WorkloadTask) -> dict:
    """Project a workload record back onto description fields (round-trip)."""
    return {
        "uid": task.uid,
        "payload": task.payload,
        "ranks": task.ranks,
        "cores_per_rank": task.cores_per_rank,
        "gpus_per_rank": task.gpus_per_rank,
        "gpus_total": task.gpus_total,
    }


class PilotExecutor:
    """ExecutorHandle implementation backed by a pilot agent.

    submit() is accepted only between successful start-up and shutdown;
    every submitted description yields exactly one future, settled from
    pilot callbacks.
    """

    def __init__(self, cfg: BridgeConfig, loop: EventLoop, log: EventLog,
                 backend=None):
        problems = cfg.validate()
        if problems:
            raise BridgeError(f"invalid bridge config: {problems}")
        self.cfg = cfg
        self.loop = loop
        self.log = log
        self.backend = backend
        self.ready = False
        self.stopping = False
        self.stopped = False
        self.futures: dict[str, Future] = {}
        self.workload: dict[str, WorkloadTask] = {}
        self._seen_callbacks: set = set()
        self._callback_queue: deque = deque()
        self._drain_scheduled = False
        self._on_ready = None
        self._on_stopped = None
        self.stats = {"descriptions_submitted": 0, "workload_tasks_created": 0,
                      "callbacks_received": 0, "callbacks_deduplicated": 0}
        self.agent: PilotAgent | None = None

    # -- lifecycle -----------------------------------------------------------

    def start(self, on_ready=None) -> "PilotExecutor":
        self._on_ready = on_ready
        self.log.append(self.loop.now_ms(), EXECUTOR_UID, EXEC_STARTING)
        try:
            self.agent = PilotAgent(
                self.cfg.pilot, self.loop, self.log,
                startup_delay_ms=round(self.cfg.pilot_startup_s * 1000),
                on_task_event=self._receive_callback,
                backend=self.backend,
            )
        except PilotError as exc:
            raise PilotStartupFailure(str(exc)) from exc
        self.agent.start(on_ready=self._agent_ready)
        return self

    def _agent_ready(self) -> None:
        extra_ms = round(self.cfg.executor_startup_extra_s * 1000)
        self.loop.call_later(extra_ms, self._mark_ready)

    def _mark_ready(self) -> None:
        self.ready = True
        self.log.append(self.loop.now_ms(), EXECUTOR_UID, EXEC_READY)
        if self._on_ready is not None:
            self._on_ready()

    def status(self) -> dict:
        info = {"ready": self.ready, "stopping": self.stopping, "stopped": self.stopped}
        if self.agent is not None:
            info.update(self.agent.status())
        return info

    def shutdown(self, cancel_running: bool = True, on_stopped=None) -> None:
        if self.stopping or self.stopped:
            return
        self.stopping = True
        self.ready = False
        self._on_stopped = on_stopped
        self.log.append(self.loop.now_ms(), EXECUTOR_UID, EXEC_STOPPING)
        assert self.agent is not None
        self.agent.drain_and_stop(cancel_running=cancel_running,
                                  on_stopped=self._agent_stopped)

    def _agent_stopped(self) -> None:
        teardown_ms = round(self.cfg.executor_teardown_s * 1000)
        self.loop.call_later(teardown_ms, self._mark_stopped)

    def _mark_stopped(self) -> None:
        self.stopped = True
        self.log.append(self.loop.now_ms(), EXECUTOR_UID, EXEC_STOPPED)
        if self._on_stopped is not None:
            self._on_stopped()

    # -- submission ------------------------------------------------------------

    def submit(self, desc: TaskDescription) -> Future:
        if not self.ready:
            raise ExecutorNotReady("executor not between start-up and shutdown")
        self.stats["descriptions_submitted"] += 1
        future = Future(desc.uid)
        self.futures[desc.uid] = future
        now = self.loop.now_ms()
        self.log.append(now, desc.uid, TaskState.NEW.value)
        try:
            task = translate(desc, self.cfg)
        except UnsupportedPayload as exc:
            self.log.append(now, desc.uid, TaskState.FAILED.value)
            future.fail(TaskResult(uid=desc.uid, ok=False, error=str(exc)))
            return future
        self.stats["workload_tasks_created"] += 1
        task.timestamps[TaskState.NEW.value] = now
        task.timestamps[TaskState.TRANSLATED.value] = now
        self.workload[desc.uid] = task
        self.log.append(now, desc.uid, TaskState.TRANSLATED.value)
        assert self.agent is not None
        self.agent.submit(task)
        return future

    # -- pilot callbacks --------------------------------------------------------

    def _receive_callback(self, uid: str, state: TaskState, result: TaskResult | None) -> None:
        # Arrivals may outpace processing; a bounded queue decouples the two
        # and overflow drains inline (backpressure, never loss).
        self._callback_queue.append((uid, state, result))
        if len(self._callback_queue) >= self.cfg.callback_queue_capacity:
            self._drain_callbacks()
        elif not self._drain_scheduled:
            self._drain_scheduled = True
            self.loop.post(self._drain_callbacks)

    def _drain_callbacks(self) -> None:
        self._drain_scheduled = False
        while self._callback_queue:
            uid, state, result = self._callback_queue.popleft()
            self.on_pilot_callback(uid, state, result)

    def on_pilot_callback(self, uid: str, state: TaskState, result: TaskResult | None) -> None:
        """Apply one pilot state-change; duplicates are dropped by (uid, state)."""
        self.stats["callbacks_received"] += 1
        if uid not in self.futures:
            return  # unknown uid: logged-equivalent, not fatal
        key = (uid, state)
        if key in self._seen_callbacks:
            self.stats["callbacks_deduplicated"] += 1
            return
        self._seen_callbacks.add(key)
        future = self.futures[uid]
        if state == TaskState.DONE:
            assert result is not None
            future.resolve(result)
        elif state in (TaskState.FAILED, TaskState.CANCELED):
            if result is None:
                result = TaskResult(uid=uid, ok=False, error=state.value.lower())
            future.fail(result)
        # Intermediate states only advance the workload record's timestamps,
        # which the agent already stamped.


def executor_start(cfg: BridgeConfig, loop: EventLoop, log: EventLog,
                   backend=None, on_ready=None) -> PilotExecutor:
    """Start a pilot-backed executor; the handle becomes ready once the
    agent reports in (drive the loop in virtual mode)."""
    return PilotExecutor(cfg, loop, log, backend=backend).start(on_ready=on_ready)
