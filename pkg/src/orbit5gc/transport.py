"""
Handshake timing emulation for a 1-RTT (QUIC-style) and a 2-RTT
(TCP + TLS style) connection setup.

Packets are opaque buffers of declared sizes sent over a :class:`SatLink`.
A step leaves its sender once the step before it is available there (the
peer's packet has arrived, or the sender's own previous packet has been
serialized), plus the per-packet processing time when the step is flagged
as needing it. Rows are timestamped at the client, as a packet capture
on the client would see them: client packets at departure, server
packets at arrival.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.optimize import nnls

from .satlink import Direction, LinkProfile, SatLink, serialization_us

# Reference in-orbit 1-RTT capture between two payloads on a satellite bus.
REFERENCE_TYPES = ("Initial", "Handshake", "Handshake", "Protected Payload")
REFERENCE_LENGTHS = (1294, 1294, 1294, 1504)
REFERENCE_ELAPSED_MS = (0.0, 2.95, 4.93, 5.83)

BENCH_RATE_BPS = 1e9
BENCH_MTU = 2048


class PreconditionViolated(ValueError):
    pass


class SchemeKind(Enum):
    OneRtt = "1-RTT"
    TwoRtt = "2-RTT"


@dataclass(frozen=True)
class Step:
    packet_type: str
    sender: str  # "client" or "server"
    size: int
    handshake: bool = True
    processing: bool = True


@dataclass(frozen=True)
class HandshakeScheme:
    kind: SchemeKind
    steps: tuple[Step, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("scheme needs at least one step")
        if any(s.sender not in ("client", "server") for s in self.steps):
            raise ValueError("step sender must be 'client' or 'server'")
        if self.steps[0].sender != "client":
            raise ValueError("the client opens the connection")

    @classmethod
    def one_rtt(cls, sizes=REFERENCE_LENGTHS) -> "HandshakeScheme":
        a, b, c, d = sizes
        return cls(SchemeKind.OneRtt, (
            Step("Initial", "client", a),
            Step("Handshake", "server", b),
            Step("Handshake", "client", c),
            # 1-RTT data goes out as soon as the client flight lands; no
            # handshake computation sits in front of it.
            Step("Protected Payload", "server", d, handshake=False, processing=False),
        ))

    @classmethod
    def two_rtt(cls, sizes=(60, 60, 52, 1294, 1294, 1504)) -> "HandshakeScheme":
        syn, synack, ack, hello, fin, payload = sizes
        return cls(SchemeKind.TwoRtt, (
            Step("Syn", "client", syn),
            Step("SynAck", "server", synack),
            Step("Ack", "client", ack),
            Step("Hello", "client", hello),
            Step("Finished", "server", fin),
            Step("Payload", "client", payload, handshake=False),
        ))


@dataclass(frozen=True)
class TraceRow:
    number: int
    packet_type: str
    elapsed_us: int
    length: int

    @property
    def elapsed_ms(self) -> float:
        return self.elapsed_us / 1000.0


@dataclass(frozen=True)
class HandshakeTrace:
    scheme: HandshakeScheme
    rows: tuple[TraceRow, ...]
    crossings: int          # one-way link crossings before establishment
    processing_steps: int   # processing delays before establishment
    serialization_us: int   # serialization on the path to establishment

    @property
    def established_row(self) -> TraceRow:
        return [r for r, s in zip(self.rows, self.scheme.steps) if s.handshake][-1]

    @property
    def connection_established_ms(self) -> float:
        return self.established_row.elapsed_ms

    @property
    def payload_ms(self) -> float | None:
        for row, step in zip(self.rows, self.scheme.steps):
            if not step.handshake:
                return row.elapsed_ms
        return None

    def table(self) -> str:
        lines = ["Number\tPacket Type\tElapsed Time(ms)\tLength(byte)"]
        for r in self.rows:
            lines.append(f"{r.number}\t{r.packet_type}\t{r.elapsed_ms:.2f}\t{r.length}")
        return "\n".join(lines)


def bench_profile(delay_us: float, rate_bps: float = BENCH_RATE_BPS) -> LinkProfile:
    return LinkProfile(one_way_delay_us=int(round(delay_us)), uplink_bps=rate_bps,
                       downlink_bps=rate_bps, mtu=BENCH_MTU)


def run_handshake(scheme: HandshakeScheme, profile: LinkProfile,
                  per_packet_processing_us: float = 0.0,
                  rng: np.random.Generator | None = None) -> HandshakeTrace:
    if profile.loss_prob != 0:
        raise PreconditionViolated("handshake timing needs a lossless profile")
    if per_packet_processing_us < 0:
        raise PreconditionViolated("processing time must be >= 0")
    proc = int(round(per_packet_processing_us))
    link = SatLink(profile, rng=rng, name="bench")

    rows = []
    # Per step: when the packet is available at the client and at the server.
    prev = None  # (sender, tx_end, arrival)
    # Causal bookkeeping for the crossing-count law.
    chain = (0, 0, 0)  # (crossings, processing steps, serialization) to reach the current point
    chain_at = {}
    for i, step in enumerate(scheme.steps):
        direction = Direction.Up if step.sender == "client" else Direction.Down
        if prev is None:
            ready = 0
            base = (0, 0, 0)
        elif prev[0] == step.sender:
            ready = prev[1]
            base = chain_at["tx_end"]
        else:
            ready = prev[2]
            base = chain_at["arrival"]
        depart = ready + (proc if (prev is not None and step.processing) else 0)
        cr, pr, ser = base
        if prev is not None and step.processing:
            pr += 1
        tx = link.transmit(step.size, direction, depart)
        if tx.depart_at != depart:
            raise PreconditionViolated("link was still busy; steps overlap")
        s = serialization_us(step.size, profile.rate(direction))
        chain_at = {"tx_end": (cr, pr, ser + s), "arrival": (cr + 1, pr, ser + s)}
        seen_at = depart if step.sender == "client" else tx.deliver_at
        seen_chain = (cr, pr, ser) if step.sender == "client" else chain_at["arrival"]
        rows.append((i + 1, step, seen_at, seen_chain))
        prev = (step.sender, depart + s, tx.deliver_at)

    t0 = rows[0][2]
    trace_rows = tuple(TraceRow(n, st.packet_type, t - t0, st.size) for n, st, t, _ in rows)
    last_hs = max(i for i, st in enumerate(scheme.steps) if st.handshake)
    crossings, psteps, ser = rows[last_hs][3]
    return HandshakeTrace(scheme, trace_rows, crossings, psteps, ser)


def compare_schemes(profile: LinkProfile, per_packet_processing_us: float = 0.0,
                    one_rtt: HandshakeScheme | None = None,
                    two_rtt: HandshakeScheme | None = None) -> tuple[float, float, float]:
    """Return ``(one_rtt_ms, two_rtt_ms, ratio)`` of connection-established times."""
    one = run_handshake(one_rtt or HandshakeScheme.one_rtt(), profile, per_packet_processing_us)
    two = run_handshake(two_rtt or HandshakeScheme.two_rtt(), profile, per_packet_processing_us)
    a, b = one.connection_established_ms, two.connection_established_ms
    return a, b, (b / a if a > 0 else math.nan)


@dataclass(frozen=True)
class Calibration:
    one_way_delay_us: float
    processing_us: float
    residual_ms: tuple[float, ...]

    def profile(self, rate_bps: float = BENCH_RATE_BPS) -> LinkProfile:
        return bench_profile(self.one_way_delay_us, rate_bps)


def calibrate(target_ms=REFERENCE_ELAPSED_MS, scheme: HandshakeScheme | None = None,
              rate_bps: float = BENCH_RATE_BPS, fit_rows=(1, 2, 3)) -> Calibration:
    """Fit one-way delay and per-packet processing to measured row times.

    Elapsed times are affine in (delay, processing) for a jitter-free link,
    so the coefficients come from three probe runs and the fit is a
    nonnegative least-squares solve over ``fit_rows`` (0-based).
    """
    scheme = scheme or HandshakeScheme.one_rtt()

    def elapsed(delay, proc):
        tr = run_handshake(scheme, replace(bench_profile(0, rate_bps), one_way_delay_us=delay), proc)
        return np.array([r.elapsed_us for r in tr.rows], dtype=float)

    probe = 1000
    base = elapsed(0, 0)
    d_coef = (elapsed(probe, 0) - base) / probe
    p_coef = (elapsed(0, probe) - base) / probe
    idx = list(fit_rows)
    A = np.column_stack([d_coef[idx], p_coef[idx]])
    b = np.asarray(target_ms, dtype=float)[idx] * 1000.0 - base[idx]
    (delay, proc), _ = nnls(A, b)
    delay, proc = round(delay), round(proc)
    fitted = elapsed(delay, proc) / 1000.0
    residual = tuple(float(f - t) for f, t in zip(fitted, target_ms))
    return Calibration(float(delay), float(proc), residual)
