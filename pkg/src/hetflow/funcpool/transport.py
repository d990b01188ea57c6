"""Rank transports: in-process channels (threads) and local sockets
(worker processes).  Both expose the same surface to the pool master --
a shared master inbox plus per-worker sends -- and hand each worker a
selective-receive endpoint.
"""

from __future__ import annotations

import os
import queue
import socket
import subprocess
import sys
import threading

from .protocol import ProtocolError, encode_frame, read_frame
from .runtime import WorkerEndpoint, worker_loop


class TransportFailure(Exception):
    pass


class InprocTransport:
    """Workers are daemon threads; channels are plain queues.

    Optionally records every message delivered to a worker inbox, which the
    isolation fuzz uses to prove no cross-group traffic.
    """

    def __init__(self, record_deliveries: bool = False):
        self.master_inbox: queue.Queue = queue.Queue()
        self._worker_inboxes: dict[int, queue.Queue] = {}
        self._threads: list[threading.Thread] = []
        self.deliveries: list = []
        self._record = record_deliveries
        self._delivery_lock = threading.Lock()

    def start(self, n_workers: int) -> None:
        on_delivery = self._log_delivery if self._record else None
        for wid in range(1, n_workers + 1):
            self._worker_inboxes[wid] = queue.Queue()
        for wid in range(1, n_workers + 1):
            endpoint = WorkerEndpoint(
                worker_id=wid,
                inbox=self._worker_inboxes[wid],
                send_master=self.master_inbox.put,
                send_peer=lambda peer, msg: self._worker_inboxes[peer].put(msg),
                on_delivery=on_delivery,
            )
            t = threading.Thread(target=worker_loop, args=(endpoint,),
                                 name=f"pool-worker-{wid}", daemon=True)
            t.start()
            self._threads.append(t)

    def _log_delivery(self, worker_id: int, msg: dict) -> None:
        with self._delivery_lock:
            self.deliveries.append((worker_id, msg))

    def send_to_worker(self, wid: int, msg: dict) -> None:
        self._worker_inboxes[wid].put(msg)

    def stop(self, timeout: float = 5.0) -> None:
        for t in self._threads:
            t.join(timeout=timeout)
        alive = [t.name for t in self._threads if t.is_alive()]
        if alive:
            raise TransportFailure(f"worker threads did not exit: {alive}")
        self._threads.clear()
        self._worker_inboxes.clear()


def _socket_worker_main(host: str, port: int, worker_id: int) -> None:
    """Entry point of a socket-transport worker process."""
    conn = socket.create_connection((host, port))
    stream = conn.makefile("rb")
    inbox: queue.Queue = queue.Queue()
    write_lock = threading.Lock()

    def send(msg: dict) -> None:
        with write_lock:
            conn.sendall(encode_frame(msg))

    def reader() -> None:
        try:
            while True:
                msg = read_frame(stream)
                if msg is None:
                    break
                inbox.put(msg)
        except (OSError, ProtocolError):
            pass
        inbox.put({"type": "shutdown"})  # connection gone: unwind the loop

    threading.Thread(target=reader, daemon=True).start()
    endpoint = WorkerEndpoint(
        worker_id=worker_id,
        inbox=inbox,
        send_master=send,
        # Peer traffic is relayed by the master hub.
        send_peer=lambda peer, msg: send({"type": "relay", "to": peer, "body": msg}),
    )
    try:
        worker_loop(endpoint)
    finally:
        conn.close()


class SocketTransport:
    """Workers are separate processes talking length-prefixed frames over
    localhost TCP; the master relays peer-to-peer messages."""

    def __init__(self):
        self.master_inbox: queue.Queue = queue.Queue()
        self._listener: socket.socket | None = None
        self._conns: dict[int, socket.socket] = {}
        self._conn_locks: dict[int, threading.Lock] = {}
        self._procs: list = []
        self._threads: list[threading.Thread] = []
        self._registered = threading.Semaphore(0)

    def start(self, n_workers: int, timeout: float = 30.0) -> None:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.bind(("127.0.0.1", 0))
        self._listener.listen(n_workers)
        host, port = self._listener.getsockname()
        # Fresh interpreters, immune to the parent's threads and __main__;
        # the child only needs this package importable.
        env = dict(os.environ)
        env["PYTHONPATH"] = os.pathsep.join(
            [p for p in sys.path if p] + [env.get("PYTHONPATH", "")]).rstrip(os.pathsep)
        for wid in range(1, n_workers + 1):
            code = ("from hetflow.funcpool.transport import _socket_worker_main; "
                    f"_socket_worker_main({host!r}, {port}, {wid})")
            p = subprocess.Popen([sys.executable, "-c", code], env=env)
            self._procs.append(p)
        for _ in range(n_workers):
            self._listener.settimeout(timeout)
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                raise TransportFailure("worker process never connected") from None
            t = threading.Thread(target=self._reader, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)
        for _ in range(n_workers):
            if not self._registered.acquire(timeout=timeout):
                raise TransportFailure("worker never registered")

    def _reader(self, conn: socket.socket) -> None:
        stream = conn.makefile("rb")
        try:
            first = read_frame(stream)
        except ProtocolError:
            conn.close()
            return
        if first is None or first.get("type") != "hello":
            conn.close()
            return
        wid = first["worker"]
        self._conns[wid] = conn
        self._conn_locks[wid] = threading.Lock()
        self._registered.release()
        self.master_inbox.put(first)
        try:
            while True:
                msg = read_frame(stream)
                if msg is None:
                    break
                self.master_inbox.put(msg)
        except (OSError, ProtocolError):
            pass

    def send_to_worker(self, wid: int, msg: dict) -> None:
        conn = self._conns.get(wid)
        if conn is None:
            raise TransportFailure(f"no connection to worker {wid}")
        with self._conn_locks[wid]:
            conn.sendall(encode_frame(msg))

    def stop(self, timeout: float = 10.0) -> None:
        for p in self._procs:
            try:
                p.wait(timeout=timeout)
            except subprocess.TimeoutExpired:
                p.terminate()
                p.wait(timeout=5)
        for conn in self._conns.values():
            conn.close()
        if self._listener is not None:
            self._listener.close()
        self._procs.clear()
        self._conns.clear()
