"""Single serialized event loop with an injectable monotonic clock.

All control logic in the engine (dataflow graph bookkeeping, task
translation, pilot scheduling) runs as callbacks on one loop, so a run is
a totally ordered sequence of events.  The loop supports two clocks:

* ``virtual`` -- discrete-event time.  ``run()`` pops events in timestamp
  order and jumps the clock; a full benchmark sweep replays in milliseconds
  of wall time and is bit-deterministic.
* ``real`` -- wall time from ``time.monotonic()``, with the loop hosted on
  a daemon thread.  Worker threads hand results back via ``post``.

Timestamps are integer milliseconds since loop start.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time

VIRTUAL = "virtual"
REAL = "real"


class LoopStalled(Exception):
    """Raised when a virtual-time run goes idle before its goal is met."""


class EventHandle:
    """Cancellation token for a scheduled callback."""

    __slots__ = ("cancelled",)

    def __init__(self) -> None:
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class EventLoop:
    def __init__(self, mode: str = VIRTUAL):
        if mode not in (VIRTUAL, REAL):
            raise ValueError(f"unknown clock mode: {mode}")
        self.mode = mode
        self._heap: list = []
        self._seq = itertools.count()
        self._now_ms = 0
        self._lock = threading.Lock()
        self._wakeup = threading.Condition(self._lock)
        self._t0 = time.monotonic()
        self._thread: threading.Thread | None = None
        self._stopped = False

    # -- clock ------------------------------------------------------------

    def now_ms(self) -> int:
        if self.mode == VIRTUAL:
            return self._now_ms
        return int((time.monotonic() - self._t0) * 1000)

    # -- scheduling -------------------------------------------------------

    def call_at(self, ts_ms: int, fn, *args) -> EventHandle:
        """Schedule ``fn(*args)`` at ``ts_ms``; never earlier than now."""
        handle = EventHandle()
        with self._wakeup:
            ts_ms = max(ts_ms, self.now_ms())
            heapq.heappush(self._heap, (ts_ms, next(self._seq), handle, fn, args))
            self._wakeup.notify()
        return handle

    def call_later(self, delay_ms: int, fn, *args) -> EventHandle:
        return self.call_at(self.now_ms() + max(0, int(delay_ms)), fn, *args)

    def post(self, fn, *args) -> EventHandle:
        """Enqueue a callback at the current time (thread-safe)."""
        return self.call_at(self.now_ms(), fn, *args)

    # -- virtual-time driving ----------------------------------------------

    def run_until(self, done, max_events: int = 10_000_000) -> None:
        """Process events in order until ``done()`` is true (virtual only)."""
        assert self.mode == VIRTUAL, "run_until drives the virtual clock"
        for _ in range(max_events):
            if done():
                return
            item = self._pop_next()
            if item is None:
                raise LoopStalled("event queue drained before goal was reached")
            ts, _, handle, fn, args = item
            self._now_ms = ts
            if not handle.cancelled:
                fn(*args)
        raise LoopStalled("event budget exhausted")

    def drain(self, max_events: int = 10_000_000) -> None:
        """Process every pending virtual event."""
        assert self.mode == VIRTUAL
        for _ in range(max_events):
            item = self._pop_next()
            if item is None:
                return
            ts, _, handle, fn, args = item
            self._now_ms = ts
            if not handle.cancelled:
                fn(*args)
        raise LoopStalled("event budget exhausted")

    def _pop_next(self):
        with self._lock:
            while self._heap and self._heap[0][2].cancelled:
                heapq.heappop(self._heap)
            if not self._heap:
                return None
            return heapq.heappop(self._heap)

    # -- real-time driving --------------------------------------------------

    def start_thread(self) -> None:
        """Host the loop on a daemon thread (real mode)."""
        assert self.mode == REAL
        if self._thread is not None:
            return
        self._stopped = False
        self._thread = threading.Thread(target=self._real_loop, name="engine-loop", daemon=True)
        self._thread.start()

    def stop_thread(self) -> None:
        with self._wakeup:
            self._stopped = True
            self._wakeup.notify()
        if self._thread is not None:
            self._thread.join(timeout=10)
            self._thread = None

    def _real_loop(self) -> None:
        while True:
            with self._wakeup:
                if self._stopped:
                    return
                while self._heap and self._heap[0][2].cancelled:
                    heapq.heappop(self._heap)
                if not self._heap:
                    self._wakeup.wait(timeout=0.05)
                    continue
                ts = self._heap[0][0]
                now = self.now_ms()
                if ts > now:
                    self._wakeup.wait(timeout=(ts - now) / 1000.0)
                    continue
                _, _, handle, fn, args = heapq.heappop(self._heap)
            if not handle.cancelled:
                fn(*args)
