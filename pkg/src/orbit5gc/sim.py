"""Deterministic discrete-event scheduler and JSON Lines trace recorder."""

from __future__ import annotations

import hashlib
import heapq
import json
import time
from typing import Any, Callable

TRACE_BASE_FIELDS = ("ev", "t_us", "kind", "src", "dst", "msg_type", "size_bytes")


class MalformedTrace(ValueError):
    pass


class Scheduler:
    """Integer-microsecond event loop.

    Events at equal timestamps run in insertion order. ``processed`` counts
    executed events; the event being executed has index ``processed``.
    """

    def __init__(self, real_time: bool = False):
        self._queue: list[tuple[int, int, Callable, tuple]] = []
        self._seq = 0
        self.now = 0
        self.processed = 0
        self.real_time = real_time
        self._wall0: float | None = None

    def at(self, t: int, fn: Callable, *args) -> None:
        t = int(t)
        if t < self.now:
            raise ValueError(f"cannot schedule at {t} before now={self.now}")
        heapq.heappush(self._queue, (t, self._seq, fn, args))
        self._seq += 1

    def after(self, dt: int, fn: Callable, *args) -> None:
        self.at(self.now + int(dt), fn, *args)

    def __len__(self) -> int:
        return len(self._queue)

    def peek(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def step(self) -> None:
        t, _, fn, args = heapq.heappop(self._queue)
        if self.real_time:
            if self._wall0 is None:
                self._wall0 = time.monotonic() - self.now / 1e6
            lag = self._wall0 + t / 1e6 - time.monotonic()
            if lag > 0:
                time.sleep(lag)
        self.now = t
        self.processed += 1
        fn(*args)

    def run(self, until: int | None = None, stop: Callable[[], bool] | None = None) -> None:
        """Run events with ``t <= until`` (all if None), or until ``stop()``."""
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                break
            if stop is not None and stop():
                break
            self.step()

    def pending(self):
        """Snapshot of queued ``(t, fn, args)`` in execution order."""
        return [(t, fn, args) for t, _, fn, args in sorted(self._queue)]


class Trace:
    """Append-only list of trace records tied to a scheduler clock."""

    def __init__(self, sched: Scheduler):
        self.sched = sched
        self.records: list[dict[str, Any]] = []

    def record(self, kind: str, src=None, dst=None, msg_type=None, size_bytes=None,
               t_us: int | None = None, **extra) -> dict:
        rec = {
            "ev": self.sched.processed,
            "t_us": self.sched.now if t_us is None else t_us,
            "kind": kind,
            "src": src,
            "dst": dst,
            "msg_type": msg_type,
            "size_bytes": size_bytes,
        }
        rec.update(extra)
        self.records.append(rec)
        return rec

    def lines(self):
        for rec in self.records:
            yield dumps(rec)

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())


def dumps(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"), sort_keys=False)


def trace_hash(text: str | bytes) -> str:
    """64-bit BLAKE2b digest of the serialized trace, as 16 hex digits."""
    if isinstance(text, str):
        text = text.encode()
    return hashlib.blake2b(text, digest_size=8).hexdigest()


def read_trace(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


def parse_trace(lines) -> list[dict]:
    out = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise MalformedTrace(f"line {no}: {exc}") from None
    return out
