"""Pilot agent: holds a node pool, schedules workload tasks onto core/GPU
slots, launches them through a pluggable latency model, executes them, and
emits one event-log record per lifecycle transition.

Scheduling policy (kept deliberately simple so logs replay exactly):
first-fit over nodes in ascending index, contiguous cores per rank,
whole-node chunks for multi-node tasks, strict FIFO wait queue with no
backfilling.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .core import (ExecutableSpec, FunctionRef, TaskResult, TaskState, advance_state)
from .eventlog import (EventLog, PILOT_STARTED, PILOT_STARTING, PILOT_STOPPED,
                       PILOT_STOPPING, PILOT_UID)
from .eventloop import EventLoop
from . import payloads

MODE_FUNCTION = "function"
MODE_EXECUTABLE = "executable"
MODE_MPI_FUNCTION = "mpi_function"

INSTANT = "instant"
FIXED_LATENCY = "fixed_latency"
SERIALIZED = "serialized"


class PilotError(Exception):
    pass


class CapacityExceeded(PilotError):
    def __init__(self, uid: str, reason: str):
        super().__init__(f"task {uid} can never fit this pilot: {reason}")
        self.uid = uid
        self.reason = reason


@dataclass(frozen=True)
class LauncherModel:
    """Per-task launch latency model; `serialized` funnels every launch
    through one channel so launches complete at strictly increasing times."""

    kind: str = INSTANT
    latency_s: float = 0.0

    @property
    def latency_ms(self) -> int:
        return round(self.latency_s * 1000)

    def validate(self) -> list:
        problems = []
        if self.kind not in (INSTANT, FIXED_LATENCY, SERIALIZED):
            problems.append(f"unknown launcher kind {self.kind!r}")
        if self.latency_s < 0:
            problems.append("launcher latency >= 0")
        if self.kind == SERIALIZED and self.latency_ms < 1:
            problems.append("serialized launcher needs latency >= 1 ms")
        return problems


@dataclass(frozen=True)
class PilotDescription:
    nodes: int
    cores_per_node: int
    gpus_per_node: int = 0
    walltime_s: float = 3600.0
    launcher: LauncherModel = LauncherModel()

    def validate(self) -> list:
        problems = []
        if self.nodes < 1:
            problems.append("nodes >= 1")
        if self.cores_per_node < 1:
            problems.append("cores_per_node >= 1")
        if self.gpus_per_node < 0:
            problems.append("gpus_per_node >= 0")
        if self.walltime_s <= 0:
            problems.append("walltime > 0")
        problems.extend(self.launcher.validate())
        return problems

    @property
    def total_cores(self) -> int:
        return self.nodes * self.cores_per_node

    @property
    def total_gpus(self) -> int:
        return self.nodes * self.gpus_per_node


@dataclass
class WorkloadTask:
    """Pilot-side task record: mutable state plus one timestamp per entered
    state (the translated analog of the user-facing description)."""

    uid: str
    mode: str
    payload: FunctionRef | ExecutableSpec
    ranks: int
    cores_per_rank: int
    gpus_per_rank: int
    gpus_total: int
    env: tuple = ()
    synthetic_duration_ms: int | None = None
    state: TaskState = TaskState.TRANSLATED
    timestamps: dict = field(default_factory=dict)

    def advance(self, target: TaskState, ts_ms: int) -> None:
        self.state = advance_state(self.state, target)
        prev = max(self.timestamps.values(), default=ts_ms)
        assert ts_ms >= prev, f"{self.uid}: timestamp regression {ts_ms} < {prev}"
        assert target.value not in self.timestamps, f"{self.uid}: re-entered {target.value}"
        self.timestamps[target.value] = ts_ms

    @property
    def total_cores(self) -> int:
        return self.ranks * self.cores_per_rank


@dataclass(frozen=True)
class RankSlot:
    node: int
    cores: tuple
    gpus: tuple


@dataclass(frozen=True)
class Placement:
    """Concrete slot assignment: per-rank core/GPU indices plus the full
    held-slot inventory (whole-node tasks hold every core of their nodes)."""

    uid: str
    rank_slots: tuple
    held_cores: tuple  # (node, core_idx) pairs
    held_gpus: tuple   # (node, gpu_idx) pairs

    @property
    def nodes(self) -> tuple:
        return tuple(sorted({rs.node for rs in self.rank_slots}))

    @property
    def core_count(self) -> int:
        return len(self.held_cores)

    @property
    def gpu_count(self) -> int:
        return len(self.held_gpus)


def _gpu_counts_per_rank(gpus_total: int, ranks: int) -> list:
    # Round-robin distribution: first (gpus_total % ranks) ranks get one extra.
    base, extra = divmod(gpus_total, ranks)
    return [base + (1 if r < extra else 0) for r in range(ranks)]


class NodeSlotMap:
    """Per-node core and GPU occupancy (slot -> holder uid or None)."""

    def __init__(self, desc: PilotDescription):
        self.desc = desc
        self.cores = [[None] * desc.cores_per_node for _ in range(desc.nodes)]
        self.gpus = [[None] * desc.gpus_per_node for _ in range(desc.nodes)]

    # -- feasibility --------------------------------------------------------

    def fits_in_principle(self, task: WorkloadTask) -> str | None:
        """None if the task could run on an empty pilot, else the reason."""
        d = self.desc
        if task.cores_per_rank > d.cores_per_node:
            return (f"cores_per_rank {task.cores_per_rank} exceeds "
                    f"cores_per_node {d.cores_per_node}")
        total = task.total_cores
        if total <= d.cores_per_node:
            if task.gpus_total > d.gpus_per_node:
                return (f"single-node task needs {task.gpus_total} GPUs, "
                        f"node has {d.gpus_per_node}")
            return None
        ranks_per_node = d.cores_per_node // task.cores_per_rank
        nodes_needed = math.ceil(task.ranks / ranks_per_node)
        if nodes_needed > d.nodes:
            return f"needs {nodes_needed} whole nodes, pilot has {d.nodes}"
        counts = _gpu_counts_per_rank(task.gpus_total, task.ranks)
        for first in range(0, task.ranks, ranks_per_node):
            node_demand = sum(counts[first:first + ranks_per_node])
            if node_demand > d.gpus_per_node:
                return (f"per-node GPU demand {node_demand} exceeds "
                        f"gpus_per_node {d.gpus_per_node}")
        return None

    # -- first-fit placement -------------------------------------------------

    def try_place(self, task: WorkloadTask) -> Placement | None:
        if task.total_cores <= self.desc.cores_per_node:
            for node in range(self.desc.nodes):
                placement = self._place_on_node(node, task)
                if placement is not None:
                    return placement
            return None
        return self._place_whole_nodes(task)

    def _free_runs(self, node: int) -> list:
        runs = []
        start = None
        for idx, holder in enumerate(self.cores[node]):
            if holder is None:
                if start is None:
                    start = idx
            elif start is not None:
                runs.append([start, idx - start])
                start = None
        if start is not None:
            runs.append([start, len(self.cores[node]) - start])
        return runs

    def _place_on_node(self, node: int, task: WorkloadTask) -> Placement | None:
        runs = self._free_runs(node)
        blocks = []
        for _ in range(task.ranks):
            placed = False
            for run in runs:
                if run[1] >= task.cores_per_rank:
                    blocks.append(tuple(range(run[0], run[0] + task.cores_per_rank)))
                    run[0] += task.cores_per_rank
                    run[1] -= task.cores_per_rank
                    placed = True
                    break
            if not placed:
                return None
        free_gpus = [i for i, h in enumerate(self.gpus[node]) if h is None]
        if len(free_gpus) < task.gpus_total:
            return None
        chosen_gpus = free_gpus[:task.gpus_total]
        rank_slots = []
        for r, cores in enumerate(blocks):
            rank_slots.append(RankSlot(node=node, cores=cores,
                                       gpus=tuple(chosen_gpus[r::task.ranks])))
        held_cores = tuple((node, c) for cores in blocks for c in cores)
        held_gpus = tuple((node, g) for g in chosen_gpus)
        return Placement(task.uid, tuple(rank_slots), held_cores, held_gpus)

    def _place_whole_nodes(self, task: WorkloadTask) -> Placement | None:
        d = self.desc
        if task.cores_per_rank > d.cores_per_node:
            return None
        ranks_per_node = d.cores_per_node // task.cores_per_rank
        nodes_needed = math.ceil(task.ranks / ranks_per_node)
        candidates = [n for n in range(d.nodes)
                      if all(h is None for h in self.cores[n])
                      and all(h is None for h in self.gpus[n])]
        if len(candidates) < nodes_needed:
            return None
        chosen = candidates[:nodes_needed]
        counts = _gpu_counts_per_rank(task.gpus_total, task.ranks)
        rank_slots = []
        held_gpus = []
        next_gpu = {n: 0 for n in chosen}
        for r in range(task.ranks):
            node = chosen[r // ranks_per_node]
            local = r % ranks_per_node
            cores = tuple(range(local * task.cores_per_rank,
                                (local + 1) * task.cores_per_rank))
            n_gpus = counts[r]
            if next_gpu[node] + n_gpus > d.gpus_per_node:
                return None
            gpus = tuple(range(next_gpu[node], next_gpu[node] + n_gpus))
            next_gpu[node] += n_gpus
            rank_slots.append(RankSlot(node=node, cores=cores, gpus=gpus))
            held_gpus.extend((node, g) for g in gpus)
        held_cores = tuple((n, c) for n in chosen for c in range(d.cores_per_node))
        return Placement(task.uid, tuple(rank_slots), held_cores, tuple(held_gpus))

    # -- occupancy ------------------------------------------------------------

    def hold(self, placement: Placement) -> None:
        for node, core in placement.held_cores:
            assert self.cores[node][core] is None, "core already held"
            self.cores[node][core] = placement.uid
        for node, gpu in placement.held_gpus:
            assert self.gpus[node][gpu] is None, "gpu already held"
            self.gpus[node][gpu] = placement.uid

    def release(self, placement: Placement) -> None:
        for node, core in placement.held_cores:
            assert self.cores[node][core] == placement.uid, "foreign core release"
            self.cores[node][core] = None
        for node, gpu in placement.held_gpus:
            assert self.gpus[node][gpu] == placement.uid, "foreign gpu release"
            self.gpus[node][gpu] = None

    def held_core_count(self) -> int:
        return sum(1 for node in self.cores for h in node if h is not None)


def run_solo_function(task: WorkloadTask) -> TaskResult:
    """Execute a single-rank function payload inline."""
    assert isinstance(task.payload, FunctionRef)
    try:
        fn = payloads.lookup_function(task.payload.function)
        value = fn(payloads.SoloContext(), *task.payload.args)
        return TaskResult(uid=task.uid, ok=True, value=value)
    except Exception as exc:  # payload errors become task failures
        return TaskResult(uid=task.uid, ok=False, error=f"{type(exc).__name__}: {exc}")


def run_program(task: WorkloadTask) -> TaskResult:
    assert isinstance(task.payload, ExecutableSpec)
    try:
        prog = payloads.lookup_program(task.payload.program)
        exit_code = int(prog(list(task.payload.args), dict(task.payload.env)))
    except KeyError:
        return TaskResult(uid=task.uid, ok=False,
                          error=f"unregistered program {task.payload.program!r}")
    except Exception as exc:
        return TaskResult(uid=task.uid, ok=False, error=f"{type(exc).__name__}: {exc}")
    if exit_code == 0:
        return TaskResult(uid=task.uid, ok=True, value=None, exit_code=0)
    return TaskResult(uid=task.uid, ok=False,
                      error=f"exit code {exit_code}", exit_code=exit_code)


class PilotAgent:
    """One serialized scheduling loop over a node pool.

    All mutation happens in event-loop callbacks; real-mode execution bodies
    run in a backend worker pool and deliver completions back through the
    loop.  In virtual time, execution is a pure timed event (single-rank
    function payloads are still evaluated inline so failures propagate).
    """

    def __init__(self, desc: PilotDescription, loop: EventLoop, log: EventLog,
                 startup_delay_ms: int = 0, on_task_event=None, backend=None):
        problems = desc.validate()
        if problems:
            raise PilotError(f"invalid pilot description: {problems}")
        self.desc = desc
        self.loop = loop
        self.log = log
        self.slots = NodeSlotMap(desc)
        self.startup_delay_ms = startup_delay_ms
        self.on_task_event = on_task_event
        self.backend = backend  # real-mode execution backend, None in virtual
        self.state = "created"
        self.queue: deque[WorkloadTask] = deque()
        self.placements: dict[str, Placement] = {}
        self.tasks: dict[str, WorkloadTask] = {}
        self._timers: dict[str, object] = {}
        self._launch_tail_ms = 0
        self._walltime_timer = None
        self._started_ms: int | None = None
        self._on_stopped = None
        self._stop_cancels_running = True

    # -- lifecycle -----------------------------------------------------------

    def start(self, on_ready=None) -> None:
        assert self.state == "created"
        self.state = "starting"
        self.log.append(self.loop.now_ms(), PILOT_UID, PILOT_STARTING)
        self.loop.call_later(self.startup_delay_ms, self._mark_started, on_ready)

    def _mark_started(self, on_ready) -> None:
        self.state = "active"
        self._started_ms = self.loop.now_ms()
        self.log.append(self._started_ms, PILOT_UID, PILOT_STARTED,
                        nodes=tuple(range(self.desc.nodes)),
                        cores=self.desc.total_cores, gpus=self.desc.total_gpus)
        walltime_ms = round(self.desc.walltime_s * 1000)
        self._walltime_timer = self.loop.call_at(
            self._started_ms + walltime_ms, self._on_walltime)
        if on_ready is not None:
            on_ready()

    def status(self) -> dict:
        return {
            "state": self.state,
            "capacity_cores": self.desc.total_cores,
            "capacity_gpus": self.desc.total_gpus,
            "queued": len(self.queue),
            "in_flight": len(self.placements),
        }

    # -- submission ------------------------------------------------------------

    def submit(self, task: WorkloadTask) -> None:
        if self.state != "active":
            raise PilotError(f"pilot not accepting tasks (state={self.state})")
        now = self.loop.now_ms()
        self.tasks[task.uid] = task
        task.advance(TaskState.SUBMITTED, now)
        self.log.append(now, task.uid, TaskState.SUBMITTED.value)
        self._notify(task)
        reason = self.slots.fits_in_principle(task)
        if reason is not None:
            self._fail_now(task, CapacityExceeded(task.uid, reason))
            return
        self.queue.append(task)
        self._pump()

    def _fail_now(self, task: WorkloadTask, exc: Exception) -> None:
        now = self.loop.now_ms()
        task.advance(TaskState.FAILED, now)
        self.log.append(now, task.uid, TaskState.FAILED.value)
        self._notify(task, TaskResult(uid=task.uid, ok=False, error=str(exc)))

    # -- scheduling --------------------------------------------------------------

    def _pump(self) -> None:
        # Strict FIFO: stop at the first task that does not fit (no backfill).
        while self.queue and self.state == "active":
            head = self.queue[0]
            placement = self.slots.try_place(head)
            if placement is None:
                return
            self.queue.popleft()
            self.slots.hold(placement)
            self.placements[head.uid] = placement
            now = self.loop.now_ms()
            head.advance(TaskState.SCHEDULED, now)
            self._log_task(head, placement)
            self._notify(head)
            self._launch(head, placement)

    def _launch(self, task: WorkloadTask, placement: Placement) -> None:
        now = self.loop.now_ms()
        task.advance(TaskState.LAUNCHING, now)
        self._log_task(task, placement)
        self._notify(task)
        model = self.desc.launcher
        if model.kind == INSTANT:
            t_run = now
        elif model.kind == FIXED_LATENCY:
            t_run = now + model.latency_ms
        else:  # SERIALIZED: one launch channel, completions strictly ordered
            t_run = max(now, self._launch_tail_ms) + model.latency_ms
            self._launch_tail_ms = t_run
        self._timers[task.uid] = self.loop.call_at(t_run, self._start_running, task)

    # -- execution ---------------------------------------------------------------

    def _start_running(self, task: WorkloadTask) -> None:
        self._timers.pop(task.uid, None)
        now = self.loop.now_ms()
        task.advance(TaskState.RUNNING, now)
        self._log_task(task, self.placements[task.uid])
        self._notify(task)
        if self.backend is not None:
            self.backend.run(task, self.placements[task.uid],
                             lambda result, t=task: self.loop.post(self._finish, t, result))
            return
        # Virtual time: completion is a pure event after the synthetic
        # duration; single-rank functions still evaluate so errors surface.
        duration = task.synthetic_duration_ms or 0
        if task.mode == MODE_FUNCTION:
            result = run_solo_function(task)
        elif task.mode == MODE_EXECUTABLE and task.synthetic_duration_ms is None:
            result = run_program(task)
        else:
            result = TaskResult(uid=task.uid, ok=True, value=None,
                                exit_code=0 if task.mode == MODE_EXECUTABLE else None)
        self._timers[task.uid] = self.loop.call_at(now + duration, self._finish, task, result)

    def _finish(self, task: WorkloadTask, result: TaskResult) -> None:
        if task.state.is_terminal():
            return  # canceled while in flight
        self._timers.pop(task.uid, None)
        now = self.loop.now_ms()
        target = TaskState.DONE if result.ok else TaskState.FAILED
        task.advance(target, now)
        placement = self.placements.pop(task.uid)
        self._log_task(task, placement)
        self.slots.release(placement)
        self._notify(task, result)
        self._pump()
        self._maybe_finish_stop()

    # -- teardown -----------------------------------------------------------------

    def _on_walltime(self) -> None:
        self._cancel_queued()
        self._cancel_in_flight()
        self._stop_now()

    def _cancel_queued(self) -> None:
        now = self.loop.now_ms()
        while self.queue:
            task = self.queue.popleft()
            task.advance(TaskState.CANCELED, now)
            self.log.append(now, task.uid, TaskState.CANCELED.value)
            self._notify(task, TaskResult(uid=task.uid, ok=False, error="canceled"))

    def _cancel_in_flight(self) -> None:
        now = self.loop.now_ms()
        # Insertion order = scheduling order, so cancellation logs replay
        # deterministically.
        for uid, placement in list(self.placements.items()):
            task = self.tasks[uid]
            timer = self._timers.pop(uid, None)
            if timer is not None:
                timer.cancel()
            task.advance(TaskState.CANCELED, now)
            self._log_task(task, placement)
            self.slots.release(placement)
            self._notify(task, TaskResult(uid=uid, ok=False, error="canceled"))
        self.placements.clear()

    def drain_and_stop(self, cancel_running: bool = True, on_stopped=None) -> EventLog:
        """Cancel the wait queue, settle in-flight tasks per flag, stop."""
        if self.state in ("stopped", "stopping"):
            return self.log
        self.log.append(self.loop.now_ms(), PILOT_UID, PILOT_STOPPING)
        self.state = "stopping"
        self._on_stopped = on_stopped
        self._cancel_queued()
        if cancel_running:
            self._cancel_in_flight()
        self._maybe_finish_stop()
        return self.log

    def _maybe_finish_stop(self) -> None:
        if self.state == "stopping" and not self.placements:
            self._stop_now()

    def _stop_now(self) -> None:
        if self.state == "stopped":
            return
        self.state = "stopped"
        if self._walltime_timer is not None:
            self._walltime_timer.cancel()
        self.log.append(self.loop.now_ms(), PILOT_UID, PILOT_STOPPED,
                        nodes=tuple(range(self.desc.nodes)),
                        cores=self.desc.total_cores, gpus=self.desc.total_gpus)
        assert self.slots.held_core_count() == 0, "slots leaked at stop"
        if self._on_stopped is not None:
            self._on_stopped()

    # -- helpers ---------------------------------------------------------------

    def _log_task(self, task: WorkloadTask, placement: Placement) -> None:
        self.log.append(self.loop.now_ms(), task.uid, task.state.value,
                        nodes=placement.nodes, cores=placement.core_count,
                        gpus=placement.gpu_count)

    def _notify(self, task: WorkloadTask, result: TaskResult | None = None) -> None:
        if self.on_task_event is not None:
            self.on_task_event(task.uid, task.state, result)
