"""
Satellite link emulation.

Geometry helpers (slant range, propagation and fiber latency) plus
:class:`SatLink`, a two-direction link with serialization, propagation
delay, seeded jitter and loss, and contact windows.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s
EARTH_RADIUS_KM = 6371.0
FIBER_FACTOR = 2.0 / 3.0
DEFAULT_STRETCH = 1.5
DEFAULT_QUEUE_LIMIT = 1024


class LinkError(Exception):
    pass


class OversizePacket(LinkError):
    pass


class Direction(Enum):
    Up = "up"
    Down = "down"


@dataclass(frozen=True)
class LinkProfile:
    one_way_delay_us: int = 100_000
    jitter_stddev_us: float = 0.0
    loss_prob: float = 0.0
    uplink_bps: float = 1_000_000.0
    downlink_bps: float = 10_000_000.0
    mtu: int = 1500
    reorder_allowed: bool = False

    def __post_init__(self):
        if self.one_way_delay_us < 0:
            raise ValueError("one_way_delay_us must be >= 0")
        if self.jitter_stddev_us < 0:
            raise ValueError("jitter_stddev_us must be >= 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        if self.uplink_bps <= 0 or self.downlink_bps <= 0:
            raise ValueError("link rates must be positive")
        if self.mtu <= 0:
            raise ValueError("mtu must be positive")

    def rate(self, direction: Direction) -> float:
        return self.uplink_bps if direction is Direction.Up else self.downlink_bps


@dataclass(frozen=True)
class OrbitGeometry:
    altitude_km: float
    elevation_deg: float = 90.0

    def __post_init__(self):
        if self.altitude_km < 0:
            raise ValueError("altitude must be >= 0")
        if not 0.0 < self.elevation_deg <= 90.0:
            raise ValueError("elevation must lie in (0, 90] degrees")

    @property
    def slant_range_km(self) -> float:
        """Line-of-sight distance over a spherical Earth (law of cosines)."""
        if self.elevation_deg == 90.0:
            return float(self.altitude_km)
        e = math.radians(self.elevation_deg)
        r = EARTH_RADIUS_KM
        orbit = r + self.altitude_km
        return math.sqrt(orbit**2 - (r * math.cos(e))**2) - r * math.sin(e)


@dataclass(frozen=True)
class ContactWindow:
    open_at: int
    close_at: int

    def __post_init__(self):
        if self.open_at >= self.close_at:
            raise ValueError(f"window opens at {self.open_at} but closes at {self.close_at}")


def propagation_delay(geom: OrbitGeometry) -> float:
    """One-way propagation delay in microseconds."""
    return geom.slant_range_km * 1e3 / SPEED_OF_LIGHT * 1e6


def fiber_latency(path_km: float) -> float:
    """Fiber latency in microseconds at two thirds of c."""
    if path_km <= 0:
        raise ValueError("path_km must be positive")
    return path_km * 1e3 / (FIBER_FACTOR * SPEED_OF_LIGHT) * 1e6


def compare_fiber_vs_leo(ground_path_km: float, geom: OrbitGeometry, hops: int = 2,
                         stretch: float = DEFAULT_STRETCH) -> tuple[float, float, float]:
    """Return ``(fiber_us, leo_us, improvement_ratio)`` for a great-circle path.

    The fiber route is the great-circle distance times ``stretch``; the LEO
    route is ``hops`` ground-satellite legs plus inter-satellite travel over
    the great-circle distance at c.
    """
    if hops < 2:
        raise ValueError("need at least an up and a down hop")
    if ground_path_km <= 0:
        raise ValueError("ground_path_km must be positive")
    fiber_us = fiber_latency(ground_path_km * stretch)
    leo_us = hops * propagation_delay(geom) + ground_path_km * 1e3 / SPEED_OF_LIGHT * 1e6
    return fiber_us, leo_us, 1.0 - leo_us / fiber_us


def serialization_us(size_bytes: int, bps: float) -> int:
    """Transmission time rounded up to whole microseconds."""
    return math.ceil(size_bytes * 8 * 1e6 / bps - 1e-9)


def normalize_windows(windows) -> tuple[ContactWindow, ...]:
    out = tuple(sorted((w if isinstance(w, ContactWindow) else ContactWindow(*w) for w in windows),
                       key=lambda w: w.open_at))
    for a, b in zip(out, out[1:]):
        if b.open_at < a.close_at:
            raise ValueError(f"contact windows overlap: {a} and {b}")
    return out


@dataclass
class Transmission:
    """Outcome of one :meth:`SatLink.transmit` call."""
    direction: Direction
    size: int
    sent_at: int
    depart_at: int | None = None
    deliver_at: int | None = None
    dropped: str | None = None  # "loss", "queue_full", "no_window"
    queued: bool = False


@dataclass
class _DirState:
    busy_until: int = 0
    last_delivery: int = 0
    deferred: list[int] = field(default_factory=list)  # departure times held for a window


class SatLink:
    """Two-direction link with contact windows.

    ``windows`` empty means always open. Outside a window the policy is
    ``"queue"`` (hold until the next opening, at most ``queue_limit``
    messages per direction) or ``"drop"``.
    """

    def __init__(self, profile: LinkProfile, rng: np.random.Generator | None = None,
                 windows=(), policy: str = "queue", queue_limit: int = DEFAULT_QUEUE_LIMIT,
                 name: str = "link"):
        if policy not in ("queue", "drop"):
            raise ValueError(f"unknown window policy {policy!r}")
        self.profile = profile
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.windows = normalize_windows(windows)
        self._opens = [w.open_at for w in self.windows]
        self.policy = policy
        self.queue_limit = queue_limit
        self.name = name
        self._state = {d: _DirState() for d in Direction}
        self.bytes_sent = {d: 0 for d in Direction}

    def is_open(self, t: int) -> bool:
        if not self.windows:
            return True
        i = bisect.bisect_right(self._opens, t) - 1
        return i >= 0 and t < self.windows[i].close_at

    def next_open(self, t: int) -> int | None:
        """Earliest instant >= t at which the link is open."""
        if self.is_open(t):
            return t
        i = bisect.bisect_right(self._opens, t)
        return self.windows[i].open_at if i < len(self.windows) else None

    def _jitter(self) -> int:
        sd = self.profile.jitter_stddev_us
        if sd <= 0:
            return 0
        # Zero-mean Gaussian truncated at 0 is the half-normal.
        return int(round(abs(self.rng.normal(0.0, sd))))

    def transmit(self, size: int, direction: Direction, now: int) -> Transmission:
        p = self.profile
        if size > p.mtu:
            raise OversizePacket(f"{size} bytes exceeds MTU {p.mtu}")
        st = self._state[direction]
        tx = Transmission(direction, size, now)

        start = max(now, st.busy_until)
        # A message is held for a window if the link is closed when it is
        # handed over or when its turn on the link comes up.
        if not (self.is_open(now) and self.is_open(start)):
            if self.policy == "drop":
                tx.dropped = "no_window"
                return tx
            st.deferred = [d for d in st.deferred if d > now]
            if len(st.deferred) >= self.queue_limit:
                tx.dropped = "queue_full"
                return tx
            opening = self.next_open(start)
            if opening is None:
                tx.dropped = "no_window"
                return tx
            start = opening
            tx.queued = True
            st.deferred.append(start)

        # Loss is drawn for every message that gets onto the air so that the
        # random stream does not depend on the window state.
        lost = p.loss_prob > 0 and self.rng.random() < p.loss_prob
        jitter = self._jitter()
        tx_end = start + serialization_us(size, p.rate(direction))
        st.busy_until = tx_end
        self.bytes_sent[direction] += size
        tx.depart_at = start
        if lost:
            tx.dropped = "loss"
            return tx
        deliver = tx_end + p.one_way_delay_us + jitter
        if not p.reorder_allowed:
            deliver = max(deliver, st.last_delivery)
            st.last_delivery = deliver
        tx.deliver_at = deliver
        return tx
