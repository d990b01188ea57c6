"""Domain types shared by every layer: task descriptions, lifecycle states,
results, and their validation rules.

These are pure value types; nothing here touches a clock or a thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class TaskKind(str, Enum):
    FUNCTION = "function"
    EXECUTABLE = "executable"


@dataclass(frozen=True)
class FunctionRef:
    """A registered function name plus structured (JSON-able) arguments."""

    function: str
    args: tuple = ()


@dataclass(frozen=True)
class ExecutableSpec:
    """A named local program with arguments and environment pairs."""

    program: str
    args: tuple = ()
    env: tuple = ()  # (key, value) pairs


@dataclass(frozen=True)
class TaskDescription:
    """User-facing task: payload, parallelism, resources, dependencies.

    Resource fields left as None are filled from the bridge defaults at
    translation time.  ``gpus`` is the task-level GPU total; when omitted it
    defaults to ``gpus_per_rank * ranks``.  GPUs that do not divide evenly
    over ranks (e.g. 2 GPUs over 8 ranks) can only be expressed at task
    level.
    """

    uid: str
    kind: TaskKind
    payload: FunctionRef | ExecutableSpec
    ranks: int | None = None
    cores_per_rank: int | None = None
    gpus_per_rank: int | None = None
    gpus: int | None = None
    depends_on: tuple = ()
    synthetic_duration: float | None = None  # seconds


class TaskState(str, Enum):
    NEW = "NEW"
    TRANSLATED = "TRANSLATED"
    SUBMITTED = "SUBMITTED"
    SCHEDULED = "SCHEDULED"
    LAUNCHING = "LAUNCHING"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"
    CANCELED = "CANCELED"

    def is_terminal(self) -> bool:
        return self in (TaskState.DONE, TaskState.FAILED, TaskState.CANCELED)


# Position along the forward chain.  DONE and FAILED share the last slot:
# one run reaches exactly one of them.  CANCELED sits outside the chain and
# is reachable from any non-terminal state.
_CHAIN_INDEX = {
    TaskState.NEW: 0,
    TaskState.TRANSLATED: 1,
    TaskState.SUBMITTED: 2,
    TaskState.SCHEDULED: 3,
    TaskState.LAUNCHING: 4,
    TaskState.RUNNING: 5,
    TaskState.DONE: 6,
    TaskState.FAILED: 6,
}


class IllegalTransition(Exception):
    def __init__(self, current: TaskState, target: TaskState):
        super().__init__(f"illegal transition {current.value} -> {target.value}")
        self.current = current
        self.target = target


def is_legal_transition(current: TaskState, target: TaskState) -> bool:
    """True iff current -> target follows the lifecycle.

    Accepted histories are exactly the subsequences of the forward chain
    (states may be skipped, never revisited), optionally ending in one
    CANCELED from a non-terminal state.  Terminal states absorb.
    """
    if current.is_terminal():
        return False
    if target == TaskState.CANCELED:
        return True
    if target == TaskState.NEW:
        return False
    return _CHAIN_INDEX[target] > _CHAIN_INDEX[current]


def advance_state(current: TaskState, target: TaskState) -> TaskState:
    if not is_legal_transition(current, target):
        raise IllegalTransition(current, target)
    return target


@dataclass
class TaskResult:
    """Outcome record handed back through futures and callbacks."""

    uid: str
    ok: bool
    value: object = None
    error: str | None = None
    exit_code: int | None = None

    def __post_init__(self):
        if self.ok and self.error is not None:
            raise ValueError("ok results carry no error message")
        if not self.ok and self.error is None:
            raise ValueError("failed results carry an error message")


@dataclass
class ValidationReport:
    """Outcome of validate_task: ok flag plus the violated invariants."""

    uid: str
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_task(desc: TaskDescription) -> ValidationReport:
    """Check one description against the task invariants.  Pure."""
    violations = []
    if not desc.uid:
        violations.append("uid nonempty")
    if desc.ranks is not None and desc.ranks < 1:
        violations.append("ranks >= 1")
    if desc.cores_per_rank is not None and desc.cores_per_rank < 1:
        violations.append("cores_per_rank >= 1")
    if desc.gpus_per_rank is not None and desc.gpus_per_rank < 0:
        violations.append("gpus_per_rank >= 0")
    if desc.gpus is not None and desc.gpus < 0:
        violations.append("gpus >= 0")
    if desc.uid in desc.depends_on:
        violations.append("depends_on contains no self-reference")
    if desc.synthetic_duration is not None and desc.synthetic_duration < 0:
        violations.append("synthetic_duration >= 0")
    if desc.kind == TaskKind.FUNCTION and not isinstance(desc.payload, FunctionRef):
        violations.append("function tasks carry a FunctionRef payload")
    if desc.kind == TaskKind.EXECUTABLE and not isinstance(desc.payload, ExecutableSpec):
        violations.append("executable tasks carry an ExecutableSpec payload")
    return ValidationReport(uid=desc.uid, violations=violations)


def validate_unique_uids(descs) -> list:
    """Cross-task check: uids unique within a run."""
    seen = set()
    dupes = []
    for d in descs:
        if d.uid in seen:
            dupes.append(d.uid)
        seen.add(d.uid)
    return dupes
