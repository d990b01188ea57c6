"""Synthetic workload generators for the benchmark experiments, scaled to
desk size.  Generators are seed-deterministic: the same arguments produce a
byte-identical workflow file.

Durations are scaled stand-ins (the full-size runs use ~100 s payloads);
pre/post step durations default to 0.1 s, which is a generator choice, not
a measured value.
"""

from __future__ import annotations

from .bridge import BridgeConfig
from .core import ExecutableSpec, FunctionRef, TaskDescription, TaskKind
from .pilot import INSTANT, LauncherModel, PilotDescription
from .workflow import RunSection, WorkflowFile

# Modeled bring-up/teardown latencies: fixed, scale-invariant components so
# overhead accounting is non-trivial in virtual time.
DEFAULT_PILOT_STARTUP_S = 0.5
DEFAULT_EXEC_EXTRA_S = 0.2
DEFAULT_TEARDOWN_S = 0.1

WEAK = "weak"
STRONG = "strong"


def _run_section(run_id: str, clock: str, seed: int) -> RunSection:
    return RunSection(clock=clock, seed=seed, run_id=run_id,
                      log_path=f"{run_id}.events.log",
                      report_path=f"{run_id}.report.csv")


def _bridge(pilot: PilotDescription, startup_model: bool = True) -> BridgeConfig:
    if not startup_model:
        return BridgeConfig(pilot=pilot)
    return BridgeConfig(
        pilot=pilot,
        pilot_startup_s=DEFAULT_PILOT_STARTUP_S,
        executor_startup_extra_s=DEFAULT_EXEC_EXTRA_S,
        executor_teardown_s=DEFAULT_TEARDOWN_S,
    )


def gen_exp1(nodes: int, scaling: str = WEAK, *, cores_per_node: int = 8,
             tasks_per_node: int = 8, total_tasks: int = 256,
             duration_s: float = 0.5, launcher: LauncherModel | None = None,
             seed: int = 0, clock: str = "virtual",
             startup_model: bool = True) -> WorkflowFile:
    """Homogeneous sweep of multi-rank no-op functions, each spanning two
    nodes (ranks = 2 x cores_per_node, one core per rank).

    Weak scaling keeps tasks-per-node fixed; strong scaling keeps the total
    task count fixed.
    """
    if scaling not in (WEAK, STRONG):
        raise ValueError(f"scaling must be weak or strong, got {scaling!r}")
    if nodes < 2:
        raise ValueError("two-node tasks need at least 2 nodes")
    pilot = PilotDescription(nodes=nodes, cores_per_node=cores_per_node,
                             launcher=launcher or LauncherModel(INSTANT))
    n_tasks = tasks_per_node * nodes if scaling == WEAK else total_tasks
    ranks = 2 * cores_per_node
    tasks = [
        TaskDescription(
            uid=f"task.{i:06d}",
            kind=TaskKind.FUNCTION,
            payload=FunctionRef("noop"),
            ranks=ranks,
            cores_per_rank=1,
            synthetic_duration=duration_s,
        )
        for i in range(n_tasks)
    ]
    run = _run_section(f"exp1-{scaling}-n{nodes:04d}", clock, seed)
    return WorkflowFile(pilot=pilot, bridge=_bridge(pilot, startup_model),
                        run=run, tasks=tasks)


def gen_colmena(nodes: int, *, triples_per_node: int = 5,
                cores_per_node: int = 8, sim_duration_s: float = 1.0,
                pre_duration_s: float = 0.1, post_duration_s: float = 0.1,
                launcher: LauncherModel | None = None, seed: int = 0,
                clock: str = "virtual", startup_model: bool = True) -> WorkflowFile:
    """Chained triples: a one-core staging function, a whole-node synthetic
    simulation executable, and a one-core collection function."""
    pilot = PilotDescription(nodes=nodes, cores_per_node=cores_per_node,
                             launcher=launcher or LauncherModel(INSTANT))
    tasks = []
    for i in range(triples_per_node * nodes):
        pre = TaskDescription(
            uid=f"pre.{i:06d}", kind=TaskKind.FUNCTION,
            payload=FunctionRef("pre_process", args=(i,)),
            ranks=1, cores_per_rank=1, synthetic_duration=pre_duration_s,
        )
        sim = TaskDescription(
            uid=f"sim.{i:06d}", kind=TaskKind.EXECUTABLE,
            payload=ExecutableSpec("simulate"),
            ranks=1, cores_per_rank=cores_per_node,
            depends_on=(pre.uid,), synthetic_duration=sim_duration_s,
        )
        post = TaskDescription(
            uid=f"post.{i:06d}", kind=TaskKind.FUNCTION,
            payload=FunctionRef("post_process", args=(i,)),
            ranks=1, cores_per_rank=1,
            depends_on=(sim.uid,), synthetic_duration=post_duration_s,
        )
        tasks.extend((pre, sim, post))
    run = _run_section(f"colmena-n{nodes:04d}", clock, seed)
    return WorkflowFile(pilot=pilot, bridge=_bridge(pilot, startup_model),
                        run=run, tasks=tasks)


def gen_iwp(nodes: int, *, tasks_per_node: int = 2, cores_per_node: int = 16,
            gpus_per_node: int = 4, ranks_per_task: int = 8,
            gpus_per_task: int = 2, duration_s: float = 0.5,
            tiles_per_rank: int = 4, launcher: LauncherModel | None = None,
            seed: int = 0, clock: str = "virtual",
            startup_model: bool = True) -> WorkflowFile:
    """Independent group-executed functions with a two-phase payload (CPU
    tiling, barrier, GPU inference) on GPU nodes."""
    pilot = PilotDescription(nodes=nodes, cores_per_node=cores_per_node,
                             gpus_per_node=gpus_per_node,
                             launcher=launcher or LauncherModel(INSTANT))
    tasks = [
        TaskDescription(
            uid=f"iwp.{i:06d}", kind=TaskKind.FUNCTION,
            payload=FunctionRef("tile_and_infer", args=(tiles_per_rank,)),
            ranks=ranks_per_task, cores_per_rank=1, gpus=gpus_per_task,
            synthetic_duration=duration_s,
        )
        for i in range(tasks_per_node * nodes)
    ]
    run = _run_section(f"iwp-n{nodes:04d}", clock, seed)
    return WorkflowFile(pilot=pilot, bridge=_bridge(pilot, startup_model),
                        run=run, tasks=tasks)


GENERATORS = {"exp1": gen_exp1, "colmena": gen_colmena, "iwp": gen_iwp}
