"""hetflow: a heterogeneous workflow execution engine.

A dataflow frontend with futures and DAG dependency resolution feeds a
pilot-style workload manager through a translating executor bridge;
multi-rank function tasks run on a master-worker pool with per-task group
communicators.  Runs produce event logs from which throughput, overhead,
and resource-utilization metrics are computed, in wall-clock or virtual
(discrete-event) time.
"""

from .core import (ExecutableSpec, FunctionRef, TaskDescription, TaskKind,
                   TaskResult, TaskState, advance_state, validate_task)
from .dataflow import (CycleDetected, DataflowEngine, Future, TaskGraph,
                       UnknownDependency, build_graph, propagate_failure,
                       resolve_dependencies, submit_workflow)
from .bridge import (BridgeConfig, PilotExecutor, UnsupportedPayload,
                     executor_start, translate)
from .pilot import (CapacityExceeded, LauncherModel, NodeSlotMap, Placement,
                    PilotAgent, PilotDescription, WorkloadTask)
from .funcpool import (FunctionExecutor, FunctionInvocation, TooLarge,
                       pool_start)
from .metrics import (RunMetrics, UtilizationBreakdown, compute_metrics,
                      compute_utilization, emit_report)
from .eventlog import EventLog, EventRecord, MalformedLog, read_log
from .eventloop import EventLoop
from .generators import gen_colmena, gen_exp1, gen_iwp
from .runner import RunOutcome, run_workflow
from .workflow import WorkflowFile, load_workflow, parse_workflow, save_workflow

__version__ = "0.1.0"
