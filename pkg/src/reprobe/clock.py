"""Wall and virtual clocks for the collector/publisher schedulers.

Runtimes park on :meth:`Clock.wait_until` between ticks. The wall clock maps
that onto a timed wait; the virtual clock parks threads until a test drives
time forward with :meth:`VirtualClock.advance_ms`, which wakes waiters one
deadline at a time and waits for each to park again before moving on. That
handshake is what makes scheduler runs deterministic under virtual time.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable

# Real-time ceiling on how long advance() waits for a woken scheduler thread
# to park again; only a bug in a runtime loop can exhaust it.
_QUIESCE_TIMEOUT_S = 30.0

DEFAULT_VIRTUAL_EPOCH_NS = 1_000_000_000_000_000_000


class Clock:
    """Time source + parking primitive shared by all scheduler loops."""

    def now_ns(self) -> int:
        raise NotImplementedError

    def wait_until(
        self,
        deadline_ns: int,
        wake: threading.Event,
        on_parked: Callable[[], None] | None = None,
    ) -> None:
        """Block until the clock reaches ``deadline_ns`` or ``wake`` is set.

        ``on_parked`` fires once the caller is registered as a waiter (or
        immediately when no parking is needed); runtimes use it to signal
        that their scheduler loop is up.
        """
        raise NotImplementedError

    def detach(self) -> None:
        """Called by a scheduler thread on exit; drops any waiter bookkeeping."""


class WallClock(Clock):
    def now_ns(self) -> int:
        return time.time_ns()

    def wait_until(self, deadline_ns, wake, on_parked=None):
        if on_parked is not None:
            on_parked()
        timeout = (deadline_ns - self.now_ns()) / 1e9
        if timeout > 0:
            wake.wait(timeout)


@dataclass
class _Waiter:
    seq: int
    deadline_ns: int
    wake: threading.Event


class VirtualClock(Clock):
    """Manually advanced clock; wakes parked waiters deterministically."""

    def __init__(self, start_ns: int = DEFAULT_VIRTUAL_EPOCH_NS):
        self._now_ns = start_ns
        self._cond = threading.Condition()
        self._waiters: dict[int, _Waiter] = {}   # thread id -> waiter
        self._inflight: set[int] = set()         # woken by advance, not yet re-parked
        self._seq = 0
        self._advance_lock = threading.Lock()

    def now_ns(self) -> int:
        with self._cond:
            return self._now_ns

    def wait_until(self, deadline_ns, wake, on_parked=None):
        tid = threading.get_ident()
        with self._cond:
            self._inflight.discard(tid)
            if wake.is_set() or self._now_ns >= deadline_ns:
                if on_parked is not None:
                    on_parked()
                self._cond.notify_all()
                return
            self._seq += 1
            self._waiters[tid] = _Waiter(self._seq, deadline_ns, wake)
            if on_parked is not None:
                on_parked()
            self._cond.notify_all()
        wake.wait()
        with self._cond:
            self._waiters.pop(tid, None)

    def detach(self) -> None:
        tid = threading.get_ident()
        with self._cond:
            self._waiters.pop(tid, None)
            self._inflight.discard(tid)
            self._cond.notify_all()

    def advance_ms(self, delta_ms: float) -> None:
        """Move time forward, firing due waiters one deadline at a time."""
        self.advance_ns(int(round(delta_ms * 1e6)))

    def advance_ns(self, delta_ns: int) -> None:
        with self._advance_lock:
            with self._cond:
                target_ns = self._now_ns + delta_ns
                while True:
                    self._wait_quiescent_locked()
                    due = self._earliest_due_locked(target_ns)
                    if due is None:
                        self._now_ns = target_ns
                        break
                    tid, waiter = due
                    self._now_ns = max(self._now_ns, waiter.deadline_ns)
                    del self._waiters[tid]
                    self._inflight.add(tid)
                    waiter.wake.set()

    def advance_until(
        self,
        predicate: Callable[[], bool],
        step_ms: float = 10.0,
        max_ms: float = 60_000.0,
    ) -> bool:
        """Advance in steps until ``predicate()`` holds; False on budget end."""
        advanced = 0.0
        while True:
            if predicate():
                return True
            if advanced >= max_ms:
                return False
            self.advance_ms(step_ms)
            advanced += step_ms

    def _wait_quiescent_locked(self) -> None:
        deadline = time.monotonic() + _QUIESCE_TIMEOUT_S
        while self._inflight:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise RuntimeError(
                    f"virtual clock: woken scheduler threads failed to park again: {self._inflight}"
                )
            self._cond.wait(timeout=min(remaining, 0.5))

    def _earliest_due_locked(self, target_ns: int) -> tuple[int, _Waiter] | None:
        due = [
            (w.deadline_ns, w.seq, tid, w)
            for tid, w in self._waiters.items()
            if w.deadline_ns <= target_ns
        ]
        if not due:
            return None
        _, _, tid, waiter = min(due)
        return tid, waiter
