"""Worker-side runtime: the per-rank execution loop and the group
collectives, expressed purely as messages over a transport endpoint.

Collectives use a root-coordinated pattern scoped by group id: barrier and
gather fan in to intra-rank 0, broadcast fans out from it.  A master-issued
abort unblocks members stuck in a collective when a peer has failed.
"""

from __future__ import annotations

from .. import payloads


class GroupAborted(Exception):
    """A peer in the group failed; unwind this member."""


class WorkerEndpoint:
    """Selective-receive mailbox facade over a transport.

    ``recv`` returns the first buffered-or-incoming message the predicate
    accepts, keeping everything else buffered in arrival order.
    """

    def __init__(self, worker_id: int, inbox, send_master, send_peer, on_delivery=None):
        self.worker_id = worker_id
        self._inbox = inbox  # queue.Queue of dict messages
        self.send_master = send_master
        self.send_peer = send_peer
        self._buffer: list = []
        self._on_delivery = on_delivery

    def recv(self, match=None, timeout: float | None = None) -> dict:
        for i, msg in enumerate(self._buffer):
            if match is None or match(msg):
                return self._buffer.pop(i)
        while True:
            msg = self._inbox.get(timeout=timeout)
            if self._on_delivery is not None:
                self._on_delivery(self.worker_id, msg)
            if match is None or match(msg):
                return msg
            self._buffer.append(msg)

    def flush_group(self, gid: str) -> None:
        self._buffer = [m for m in self._buffer if m.get("gid") != gid]


class GroupContext:
    """Per-rank view of a group: intra-rank id, size, and collectives."""

    def __init__(self, endpoint: WorkerEndpoint, gid: str, rank: int, members: list):
        self.endpoint = endpoint
        self.gid = gid
        self.rank = rank
        self.size = len(members)
        self.members = members  # worker ids ordered by intra-rank

    def _recv_coll(self, op: str):
        def match(m):
            if m.get("type") == "abort" and m.get("gid") == self.gid:
                return True
            return (m.get("type") == "coll" and m.get("gid") == self.gid
                    and m.get("op") == op)
        msg = self.endpoint.recv(match=match)
        if msg.get("type") == "abort":
            raise GroupAborted(self.gid)
        return msg

    def _send_coll(self, to_rank: int, op: str, value=None) -> None:
        self.endpoint.send_peer(self.members[to_rank], {
            "type": "coll", "gid": self.gid, "op": op,
            "from": self.rank, "value": value,
        })

    def barrier(self) -> None:
        """Return only after all group members have entered."""
        if self.size == 1:
            return
        if self.rank == 0:
            for _ in range(self.size - 1):
                self._recv_coll("barrier_enter")
            for r in range(1, self.size):
                self._send_coll(r, "barrier_release")
        else:
            self._send_coll(0, "barrier_enter")
            self._recv_coll("barrier_release")

    def broadcast(self, value=None):
        """Deliver intra-rank 0's value to every member."""
        if self.size == 1:
            return value
        if self.rank == 0:
            for r in range(1, self.size):
                self._send_coll(r, "bcast", value)
            return value
        return self._recv_coll("bcast")["value"]

    def gather(self, value):
        """Intra-rank 0 receives all values ordered by intra-rank."""
        if self.rank == 0:
            slots: list = [None] * self.size
            slots[0] = value
            for _ in range(self.size - 1):
                msg = self._recv_coll("gather")
                slots[msg["from"]] = msg["value"]
            return slots
        self._send_coll(0, "gather", value)
        return None


def worker_loop(endpoint: WorkerEndpoint) -> None:
    """Run one worker: announce once, then execute group assignments until
    told to shut down.  Environment bring-up happens here exactly once."""
    endpoint.send_master({"type": "hello", "worker": endpoint.worker_id})
    while True:
        msg = endpoint.recv(match=lambda m: m.get("type") in ("run", "shutdown", "abort"))
        if msg["type"] == "shutdown":
            endpoint.send_master({"type": "bye", "worker": endpoint.worker_id})
            return
        if msg["type"] == "abort":
            continue  # group already unwound; stale abort
        gid = msg["gid"]
        ctx = GroupContext(endpoint, gid, msg["rank"], msg["members"])
        status, value = "ok", None
        try:
            fn = payloads.lookup_function(msg["function"])
            value = fn(ctx, *msg["args"])
        except GroupAborted:
            status = "aborted"
        except KeyError:
            status, value = "error", f"unregistered function {msg['function']!r}"
        except Exception as exc:  # payload failure: report, let master abort peers
            status, value = "error", f"{type(exc).__name__}: {exc}"
        endpoint.flush_group(gid)
        endpoint.send_master({
            "type": "member_done", "gid": gid, "uid": msg["uid"],
            "rank": msg["rank"], "worker": endpoint.worker_id,
            "status": status, "value": value,
        })
