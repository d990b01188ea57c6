"""Independent oracles used to verify engine output.

Each oracle recomputes a property with a different algorithm than the code
under test: brute-force indegree replay for readiness, DFS reachability for
failure propagation, a boundary-sweep integrator for utilization, and a
stand-alone queue model for the serialized launcher.
"""

from __future__ import annotations

from hetflow.core import TaskState
from hetflow.eventlog import EventRecord, PILOT_STARTED, PILOT_STOPPED

TERMINAL = {TaskState.DONE.value, TaskState.FAILED.value, TaskState.CANCELED.value}


# -- graph oracles -----------------------------------------------------------


def is_topological(order: list, edges: list) -> bool:
    pos = {uid: i for i, uid in enumerate(order)}
    return all(pos[p] < pos[c] for p, c in edges if p in pos and c in pos)


def kahn_order(nodes: list, edges: list) -> list:
    indeg = {n: 0 for n in nodes}
    out = {n: [] for n in nodes}
    for p, c in edges:
        indeg[c] += 1
        out[p].append(c)
    ready = sorted(n for n in nodes if indeg[n] == 0)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for c in out[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort()
    return order


def brute_force_ready(nodes: list, edges: list, done: set) -> set:
    """Recompute from scratch which nodes have every producer done."""
    producers = {n: set() for n in nodes}
    for p, c in edges:
        producers[c].add(p)
    return {n for n in nodes if n not in done and producers[n] <= done}


def reachable_from(edges: list, src: str) -> set:
    out: dict = {}
    for p, c in edges:
        out.setdefault(p, []).append(c)
    seen: set = set()
    stack = list(out.get(src, []))
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        stack.extend(out.get(n, []))
    return seen


# -- event-log oracles ----------------------------------------------------------


def task_phases(records: list) -> dict:
    """uid -> {state: ts} for task records only."""
    phases: dict = {}
    for rec in records:
        if rec.state in {s.value for s in TaskState}:
            phases.setdefault(rec.uid, {})[rec.state] = rec.ts_ms
    return phases


def task_placements(records: list) -> dict:
    """uid -> (nodes, cores, gpus) captured at SCHEDULED."""
    out = {}
    for rec in records:
        if rec.state == TaskState.SCHEDULED.value:
            out[rec.uid] = (rec.nodes, rec.cores, rec.gpus)
    return out


def _held_interval(states: dict):
    start = states.get(TaskState.SCHEDULED.value)
    if start is None:
        return None
    end = min((states[s] for s in TERMINAL if s in states), default=None)
    if end is None:
        return None
    return start, end


def check_no_oversubscription(records: list, cores_per_node: int,
                              gpus_per_node: int) -> None:
    """Sweep every boundary instant and count per-node held cores/GPUs.

    Multi-node tasks hold whole nodes, so an even split of the held core
    count across the task's nodes is exact.
    """
    phases = task_phases(records)
    placements = task_placements(records)
    intervals = []  # (start, end, node, cores_on_node, gpus_share)
    for uid, states in phases.items():
        held = _held_interval(states)
        if held is None:
            continue
        nodes, cores, gpus = placements[uid]
        assert cores % len(nodes) == 0, f"{uid}: uneven node split"
        for i, node in enumerate(nodes):
            gpu_share = gpus // len(nodes) + (1 if i < gpus % len(nodes) else 0)
            intervals.append((held[0], held[1], node, cores // len(nodes), gpu_share))
    boundaries = sorted({t for iv in intervals for t in iv[:2]})
    for lo, hi in zip(boundaries, boundaries[1:]):
        mid_load: dict = {}
        mid_gpus: dict = {}
        for start, end, node, cores, gpus in intervals:
            if start <= lo and end >= hi:  # covers [lo, hi)
                mid_load[node] = mid_load.get(node, 0) + cores
                mid_gpus[node] = mid_gpus.get(node, 0) + gpus
        for node, load in mid_load.items():
            assert load <= cores_per_node, \
                f"node {node} oversubscribed: {load} cores in [{lo},{hi})"
        for node, load in mid_gpus.items():
            assert load <= gpus_per_node, \
                f"node {node} oversubscribed: {load} gpus in [{lo},{hi})"


def check_slot_conservation(records: list) -> None:
    """Every acquisition (SCHEDULED) has exactly one matching release
    (terminal record), and phase timestamps are ordered."""
    phases = task_phases(records)
    for uid, states in phases.items():
        scheduled = TaskState.SCHEDULED.value in states
        terminals = [s for s in TERMINAL if s in states]
        if scheduled:
            assert len(terminals) == 1, f"{uid}: {len(terminals)} terminal states"
            held = _held_interval(states)
            assert held is not None and held[0] <= held[1]
        else:
            assert len(terminals) <= 1


def sweep_utilization_ms(records: list) -> dict:
    """Boundary-sweep recomputation of the four-way core-ms breakdown
    (different algorithm from the per-task integration in metrics)."""
    markers = {r.state: r for r in records if r.uid in ("pilot",)}
    start = markers[PILOT_STARTED].ts_ms
    stop = markers[PILOT_STOPPED].ts_ms
    total_cores = markers[PILOT_STARTED].cores
    phases = task_phases(records)
    placements = task_placements(records)

    spans = []  # (t0, t1, state_name, cores)
    for uid, states in phases.items():
        if uid not in placements:
            continue
        cores = placements[uid][1]
        held = _held_interval(states)
        if held is None:
            continue
        sched = states[TaskState.SCHEDULED.value]
        launch = states.get(TaskState.LAUNCHING.value, held[1])
        run = states.get(TaskState.RUNNING.value, held[1])
        spans.append((sched, launch, "scheduled", cores))
        spans.append((launch, run, "launching", cores))
        spans.append((run, held[1], "running", cores))
    boundaries = sorted({start, stop} | {t for sp in spans for t in sp[:2]})
    acc = {"scheduled": 0, "launching": 0, "running": 0}
    for lo, hi in zip(boundaries, boundaries[1:]):
        width = hi - lo
        for t0, t1, name, cores in spans:
            if t0 <= lo and t1 >= hi and t0 != t1:
                acc[name] += cores * width
    total = total_cores * (stop - start)
    acc["idle"] = total - acc["scheduled"] - acc["launching"] - acc["running"]
    acc["total"] = total
    return acc


# -- launcher oracle ---------------------------------------------------------


def serialized_launch_model(schedule: list, latency_ms: int) -> list:
    """Stand-alone queue model of the single launch channel.

    schedule: (uid, scheduled_ts_ms) in launch order.  Returns
    (uid, launch_start, run_start) with one launch in flight at a time.
    """
    out = []
    tail = 0
    for uid, ts in schedule:
        run_start = max(ts, tail) + latency_ms
        tail = run_start
        out.append((uid, ts, run_start))
    return out


def launch_integrals_ms(records: list) -> dict:
    """Launching vs running core-ms integrals straight from the log."""
    phases = task_phases(records)
    placements = task_placements(records)
    launching = running = 0
    for uid, states in phases.items():
        if uid not in placements:
            continue
        cores = placements[uid][1]
        held = _held_interval(states)
        if held is None:
            continue
        launch = states.get(TaskState.LAUNCHING.value)
        run = states.get(TaskState.RUNNING.value)
        if launch is not None:
            launching += cores * ((run if run is not None else held[1]) - launch)
        if run is not None:
            running += cores * (held[1] - run)
    return {"launching": launching, "running": running}
