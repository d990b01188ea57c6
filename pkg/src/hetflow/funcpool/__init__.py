"""Master-worker function pool with per-invocation group communicators.

The master is a single serialized dispatcher: it carves the lowest-id idle
workers into a private group per invocation, ships the function to every
member with its intra-rank context, and packs the gathered per-rank results
into one task result.  Invocations that do not fit wait in a FIFO queue.

The intake channel speaks the length-prefixed frame format from
``protocol``; in-process and socket transports share it.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass

from ..core import TaskResult
from .protocol import decode_frame, invocation_frame, result_frame
from .transport import InprocTransport, SocketTransport, TransportFailure

__all__ = [
    "FunctionInvocation", "FunctionExecutor", "pool_start",
    "PoolError", "TooLarge", "TransportFailure",
]


class PoolError(Exception):
    pass


class TooLarge(PoolError):
    def __init__(self, k: int, capacity: int):
        super().__init__(f"invocation needs {k} workers, pool has {capacity}")
        self.k = k
        self.capacity = capacity


@dataclass(frozen=True)
class FunctionInvocation:
    uid: str
    function: str
    args: tuple = ()
    k: int = 1


class _Group:
    __slots__ = ("gid", "uid", "members", "done", "first_error", "aborted")

    def __init__(self, gid: str, uid: str, members: tuple):
        self.gid = gid
        self.uid = uid
        self.members = members
        self.done: dict = {}  # intra-rank -> (status, value)
        self.first_error: tuple | None = None  # (rank, message)
        self.aborted = False


class FunctionExecutor:
    """Pool master plus W-1 workers over a rank transport."""

    def __init__(self, n_workers: int, transport: str = "inproc",
                 group_cache: bool = False, record_deliveries: bool = False):
        if n_workers < 1:
            raise PoolError("pool needs at least one worker (W >= 2)")
        self.n_workers = n_workers
        if transport == "inproc":
            self.transport = InprocTransport(record_deliveries=record_deliveries)
        elif transport == "socket":
            self.transport = SocketTransport()
        else:
            raise PoolError(f"unknown transport {transport!r}")
        self.group_cache_enabled = group_cache
        self._cache: dict = {}  # (k, members) -> gid
        self.idle: set = set()
        self.groups: dict[str, _Group] = {}
        self.queue: list = []  # FIFO of FunctionInvocation
        self._gid_counter = itertools.count()
        self._result_handler = None
        self._waiters: dict[str, tuple] = {}  # uid -> (Event, [result])
        self._master: threading.Thread | None = None
        self._ready = threading.Event()
        self._stopping = False
        self.events: list = []  # (what, ...) audit trail for replay checks
        self.stats = {
            "env_inits": 0, "groups_formed": 0, "cache_hits": 0,
            "dispatched": 0, "completed": 0, "construct_ms_total": 0.0,
        }

    # -- lifecycle -----------------------------------------------------------

    def start(self, timeout: float = 30.0) -> "FunctionExecutor":
        self.transport.start(self.n_workers)
        self._master = threading.Thread(target=self._master_loop,
                                        name="pool-master", daemon=True)
        self._master.start()
        if not self._ready.wait(timeout):
            raise TransportFailure("pool never became ready")
        return self

    def stop(self, timeout: float = 10.0) -> None:
        if self._master is None:
            return
        self.transport.master_inbox.put({"type": "_stop"})
        self._master.join(timeout=timeout)
        if self._master.is_alive():
            raise PoolError("pool master did not stop")
        self._master = None
        self.transport.stop(timeout=timeout)

    # -- submission ------------------------------------------------------------

    def submit(self, inv: FunctionInvocation) -> None:
        """Queue one invocation for dispatch (raises TooLarge upfront)."""
        if inv.k > self.n_workers:
            raise TooLarge(inv.k, self.n_workers)
        if inv.k < 1:
            raise PoolError("invocation needs k >= 1")
        self.transport.master_inbox.put({"type": "invoke", "inv": inv})

    def intake(self, frame: bytes) -> None:
        """Wire-format entry point: one length-prefixed invocation frame."""
        body = decode_frame(frame)
        if body.get("type") != "invoke":
            raise PoolError(f"intake expects invoke frames, got {body.get('type')!r}")
        inv = FunctionInvocation(uid=body["uid"], function=body["function"],
                                 args=tuple(body["args"]), k=body["k"])
        if inv.k > self.n_workers or inv.k < 1:
            self._emit_result(TaskResult(
                uid=inv.uid, ok=False,
                error=f"invocation needs {inv.k} workers, pool has {self.n_workers}"))
            return
        self.transport.master_inbox.put({"type": "invoke", "inv": inv})

    def call(self, inv: FunctionInvocation, timeout: float = 60.0) -> TaskResult:
        """Submit through the wire path and block for the result."""
        event = threading.Event()
        slot: list = [None]
        self._waiters[inv.uid] = (event, slot)
        self.intake(invocation_frame(inv.uid, inv.function, inv.args, inv.k))
        if not event.wait(timeout):
            self._waiters.pop(inv.uid, None)
            raise PoolError(f"invocation {inv.uid} timed out after {timeout}s")
        result = slot[0]
        assert result is not None
        return result

    def set_result_handler(self, handler) -> None:
        """handler(frame_bytes) is called for every completed invocation."""
        self._result_handler = handler

    # -- master loop -------------------------------------------------------------

    def _master_loop(self) -> None:
        hellos = 0
        while True:
            msg = self.transport.master_inbox.get()
            kind = msg.get("type")
            if kind == "_stop":
                self._shutdown_workers()
                return
            if kind == "hello":
                hellos += 1
                self.stats["env_inits"] += 1
                self.idle.add(msg["worker"])
                self.events.append(("hello", msg["worker"]))
                if hellos == self.n_workers:
                    self._ready.set()
            elif kind == "invoke":
                self.queue.append(msg["inv"])
                self._try_dispatch()
            elif kind == "member_done":
                self._on_member_done(msg)
            elif kind == "relay":
                self.transport.send_to_worker(msg["to"], msg["body"])
            elif kind == "bye":
                self.events.append(("bye", msg["worker"]))

    def _shutdown_workers(self) -> None:
        self._stopping = True
        for wid in range(1, self.n_workers + 1):
            self.transport.send_to_worker(wid, {"type": "shutdown"})

    def _try_dispatch(self) -> None:
        # Strict FIFO: the head waits for capacity; nothing jumps the queue.
        while self.queue and self.queue[0].k <= len(self.idle):
            self._form_group(self.queue.pop(0))

    def _form_group(self, inv: FunctionInvocation) -> None:
        members = tuple(sorted(self.idle)[:inv.k])
        self.idle.difference_update(members)
        t0 = time.perf_counter()
        cache_key = (inv.k, members)
        gid = self._cache.pop(cache_key, None) if self.group_cache_enabled else None
        if gid is None:
            gid = f"group.{next(self._gid_counter):06d}"
            self.stats["groups_formed"] += 1
        else:
            self.stats["cache_hits"] += 1
        self.stats["construct_ms_total"] += (time.perf_counter() - t0) * 1000
        self.groups[gid] = _Group(gid, inv.uid, members)
        self.stats["dispatched"] += 1
        self.events.append(("form", gid, inv.uid, members))
        for rank, wid in enumerate(members):
            self.transport.send_to_worker(wid, {
                "type": "run", "gid": gid, "uid": inv.uid,
                "function": inv.function, "args": list(inv.args),
                "rank": rank, "members": list(members),
            })

    def _on_member_done(self, msg: dict) -> None:
        group = self.groups.get(msg["gid"])
        if group is None or msg["uid"] != group.uid:
            return  # stale report from an aborted generation
        rank = msg["rank"]
        group.done[rank] = (msg["status"], msg["value"])
        if msg["status"] == "error" and group.first_error is None:
            group.first_error = (rank, msg["value"])
            self._abort_peers(group)
        if len(group.done) == len(group.members):
            self._complete(group)

    def _abort_peers(self, group: _Group) -> None:
        group.aborted = True
        for rank, wid in enumerate(group.members):
            if rank not in group.done:
                self.transport.send_to_worker(wid, {"type": "abort", "gid": group.gid})

    def _complete(self, group: _Group) -> None:
        """Pack per-rank results, free the members, reuse or retire the gid."""
        del self.groups[group.gid]
        self.idle.update(group.members)
        if self.group_cache_enabled and not group.aborted:
            self._cache[(len(group.members), group.members)] = group.gid
        self.events.append(("complete", group.gid, group.uid, group.members))
        self.stats["completed"] += 1
        if group.first_error is not None:
            rank, message = group.first_error
            result = TaskResult(uid=group.uid, ok=False,
                                error=f"MemberFailure(rank={rank}): {message}")
        else:
            ranks = [group.done[r][1] for r in range(len(group.members))]
            result = TaskResult(uid=group.uid, ok=True, value=ranks)
        self._emit_result(result)
        self._try_dispatch()

    def _emit_result(self, result: TaskResult) -> None:
        waiter = self._waiters.pop(result.uid, None)
        if waiter is not None:
            event, slot = waiter
            slot[0] = result
            event.set()
        if self._result_handler is not None:
            frame = result_frame(result.uid,
                                 "ok" if result.ok else "error",
                                 result.value if isinstance(result.value, list) else [],
                                 result.error)
            self._result_handler(frame)


def pool_start(w: int, transport: str = "inproc", **kwargs) -> FunctionExecutor:
    """Bring up a pool of one master plus W-1 workers, ready to dispatch."""
    if w < 2:
        raise PoolError("pool size W must be >= 2 (master plus one worker)")
    return FunctionExecutor(w - 1, transport=transport, **kwargs).start()
