"""
Simulated UEs and gNBs.

A :class:`SimUe` mirrors the AMF registration state from what it has been
told over the air, so it can only lag the core. Procedures are started
with ``run_*`` methods and finish asynchronously; the returned
:class:`Procedure` fills in its outcome and latency as the event loop
advances. The network side is reached through a ``net`` object (the
testbed) that provides ``now``, ``after``, ``send_nas`` and the user-plane
senders.
"""

from __future__ import annotations

import ipaddress
from collections import deque
from dataclasses import dataclass, field

from . import nas
from .amf import UeState, compute_auth_response
from .nas import Cause, IeTag, MessageType, NasMessage
from .upf import TUNNEL_HEADER_LEN


class RanError(Exception):
    pass


class NotRegistered(RanError):
    pass


class NoActiveSession(RanError):
    pass


@dataclass
class Procedure:
    kind: str
    supi: str
    start_us: int
    end_us: int | None = None
    outcome: str | None = None
    params: dict = field(default_factory=dict)
    exchanges: list[list[int | None]] = field(default_factory=list)  # [sent, answered]
    confirmed: bool = False  # registration: the AMF received RegistrationComplete

    @property
    def done(self) -> bool:
        return self.outcome is not None

    @property
    def ok(self) -> bool:
        return self.outcome == "success"

    @property
    def latency_ms(self) -> float | None:
        if self.end_us is None:
            return None
        return (self.end_us - self.start_us) / 1000.0

    @property
    def exchange_ms(self) -> list[float]:
        return [(b - a) / 1000.0 for a, b in self.exchanges if b is not None]

    def summary(self) -> dict:
        return {
            "ue": self.supi,
            "kind": self.kind,
            **{k: str(v) for k, v in self.params.items()},
            "start_us": self.start_us,
            "end_us": self.end_us,
            "latency_ms": self.latency_ms,
            "exchange_ms": self.exchange_ms,
            "outcome": self.outcome,
        }


@dataclass
class TrafficFlow:
    flow_id: int
    supi: str
    dst: str
    count: int
    size: int
    interval_us: int
    uplink: bool = True
    sent: int = 0
    delivered: int = 0
    dropped: int = 0

    def summary(self) -> dict:
        return {
            "flow": self.flow_id, "ue": self.supi, "dst": self.dst,
            "direction": "uplink" if self.uplink else "downlink",
            "count": self.count, "size": self.size, "sent": self.sent,
            "delivered": self.delivered, "dropped": self.dropped,
        }


@dataclass
class UeSession:
    pdu_session_id: int
    dn_name: str
    ue_ip: ipaddress.IPv4Address
    session_ref: int
    qos_class: int
    tunnel_id: int | None = None


class SimGnb:
    """Ground gNB: assigns RAN UE ids and frames NAS into N2 envelopes."""

    def __init__(self, gnb_id: int):
        self.gnb_id = gnb_id
        self.attached: dict[int, str] = {}
        self._by_supi: dict[str, int] = {}
        self._next_ran_id = 1
        self.tunnels: dict[tuple[int, int], int] = {}  # (ran id, pdu id) -> uplink tunnel

    def attach(self, supi: str) -> int:
        ran_id = self._by_supi.get(supi)
        if ran_id is None:
            ran_id = self._next_ran_id
            self._next_ran_id += 1
            self.attached[ran_id] = supi
            self._by_supi[supi] = ran_id
        return ran_id

    def supi_for(self, ran_id: int) -> str | None:
        return self.attached.get(ran_id)


class SimUe:
    def __init__(self, supi: str, key: bytes, gnb: SimGnb, net, slice_id: int = 0):
        if not nas.is_valid_supi(supi):
            raise ValueError(f"bad SUPI {supi!r}")
        self.supi = supi
        self.key = key
        self.gnb = gnb
        self.net = net
        self.slice_id = slice_id
        self.state = UeState.Deregistered
        self.ran_id = gnb.attach(supi)
        self.pending: Procedure | None = None
        self.sessions: dict[int, UeSession] = {}
        self.history: list[Procedure] = []
        self._queue: deque = deque()
        self._next_pdu_id = 1
        self._last_uplink: NasMessage | None = None
        self._send_token = 0
        self._retries = 0

    # -- helpers ------------------------------------------------------------

    def _set_state(self, state: UeState) -> None:
        if state is not self.state:
            self.state = state
            self.net.ue_state_changed(self)

    def _begin(self, proc: Procedure) -> None:
        proc.start_us = self.net.now
        self.pending = proc
        self.history.append(proc)
        self.net.after(self.net.ue_timeout_us, self._timeout, proc)

    def _schedule(self, kind: str, body, **params) -> Procedure:
        """Run ``body(proc)`` now, or once the pending procedure finishes."""
        proc = Procedure(kind, self.supi, self.net.now, params=params)

        def start():
            self._begin(proc)
            body(proc)

        if self.pending is None:
            start()
        else:
            self._queue.append(start)
        return proc

    def _finish(self, proc: Procedure, outcome: str, end_us: int | None = None) -> None:
        if proc.done:
            return
        proc.outcome = outcome
        proc.end_us = self.net.now if end_us is None else end_us
        self._last_uplink = None
        if self.pending is proc:
            self.pending = None
        self.net.procedure_finished(proc)
        if self._queue:
            start = self._queue.popleft()
            start()

    def _send(self, msg: NasMessage, expects_reply: bool = True) -> None:
        proc = self.pending
        if proc is not None and expects_reply:
            proc.exchanges.append([self.net.now, None])
        self._last_uplink = msg if expects_reply else None
        self._send_token += 1
        self._retries = 0
        self.net.send_nas(self, msg)
        if expects_reply and self.net.retransmit_us:
            self.net.after(self.net.retransmit_us, self._retransmit, self._send_token)

    def _retransmit(self, token: int) -> None:
        if token != self._send_token or self._last_uplink is None or self.pending is None:
            return
        if self._retries >= self.net.max_retries:
            return
        self._retries += 1
        self.net.send_nas(self, self._last_uplink, retransmission=True)
        self.net.after(self.net.retransmit_us, self._retransmit, token)

    def _answered(self, arrived_us: int) -> None:
        proc = self.pending
        if proc is not None and proc.exchanges and proc.exchanges[-1][1] is None:
            proc.exchanges[-1][1] = arrived_us
        self._send_token += 1  # cancels retransmission of the answered message
        self._last_uplink = None

    def _timeout(self, proc: Procedure) -> None:
        if proc.done:
            return
        if proc.kind == "registration" and self.state is not UeState.Registered:
            self._set_state(UeState.Deregistered)
        self._finish(proc, "Timeout")

    def session_for(self, dn_name: str | None = None) -> UeSession | None:
        for s in self.sessions.values():
            if dn_name is None or s.dn_name == dn_name:
                return s
        return None

    # -- procedures ---------------------------------------------------------

    def run_registration(self) -> Procedure:
        """Start registration.

        Latency runs to the AMF's receipt of RegistrationComplete (five
        one-way crossings), or to its departure if that message is lost.
        """
        def body(proc):
            self._set_state(UeState.Deregistered)
            self.sessions.clear()
            self._send(nas.make(MessageType.RegistrationRequest, supi=self.supi,
                                slice_id=self.slice_id or None))
        return self._schedule("registration", body)

    def run_session_setup(self, dn_name: str, qos_class: int = 9,
                          pdu_session_id: int | None = None) -> Procedure:
        def body(proc):
            if self.state is not UeState.Registered:
                self._finish(proc, "NotRegistered")
                return
            pdu_id = pdu_session_id or self._next_pdu_id
            self._next_pdu_id = pdu_id % 255 + 1
            proc.params["pdu_session_id"] = pdu_id
            self._send(nas.make(MessageType.PduSessionEstablishmentRequest,
                                pdu_session_id=pdu_id, dnn=dn_name, qos_class=qos_class))
        return self._schedule("session", body, dn=dn_name)

    def run_session_release(self, dn_name: str | None = None) -> Procedure:
        def body(proc):
            session = self.session_for(dn_name)
            if session is None:
                self._finish(proc, "NoActiveSession")
                return
            proc.params["pdu_session_id"] = session.pdu_session_id
            self._send(nas.make(MessageType.PduSessionReleaseRequest,
                                pdu_session_id=session.pdu_session_id))
        return self._schedule("release", body, dn=dn_name or "")

    def run_deregistration(self) -> Procedure:
        def body(proc):
            if self.state is UeState.Deregistered:
                self._finish(proc, "NotRegistered")
                return
            self._set_state(UeState.Deregistered)
            self.sessions.clear()
            self._send(nas.make(MessageType.DeregistrationRequest, supi=self.supi),
                       expects_reply=False)
            self._finish(proc, "success")
        return self._schedule("deregistration", body)

    def generate_traffic(self, dst_ip, count: int, size: int, interval_us: int,
                         dn_name: str | None = None) -> TrafficFlow:
        """Schedule ``count`` uplink packets of ``size`` payload bytes."""
        session = self.session_for(dn_name)
        if session is None or session.tunnel_id is None:
            raise NoActiveSession(f"{self.supi} has no active session")
        mtu = self.net.feeder_mtu
        if size + TUNNEL_HEADER_LEN > mtu:
            raise ValueError(f"payload {size} exceeds MTU {mtu} minus tunnel header")
        flow = self.net.new_flow(self.supi, str(dst_ip), count, size, interval_us, uplink=True)
        for k in range(count):
            self.net.after(k * interval_us, self.net.send_uplink_packet, self, session,
                           ipaddress.IPv4Address(dst_ip), size, flow)
        return flow

    # -- downlink NAS -------------------------------------------------------

    def receive(self, msg: NasMessage, tunnel_id: int | None = None,
                arrived_us: int | None = None) -> None:
        """Handle a downlink NAS message once the UE has processed it.

        ``arrived_us`` is when it reached the UE; response latencies are
        measured to that instant.
        """
        arrived = self.net.now if arrived_us is None else arrived_us
        mt = msg.message_type
        proc = self.pending
        if mt is MessageType.AuthenticationRequest:
            if proc is None or proc.kind != "registration":
                return
            self._answered(arrived)
            self._set_state(UeState.AuthPending)
            digest = compute_auth_response(self.key, msg[IeTag.NONCE], msg.int_ie(IeTag.SEQUENCE))
            self._send(nas.make(MessageType.AuthenticationResponse, auth_response=digest))
        elif mt is MessageType.RegistrationAccept:
            if proc is None or proc.kind != "registration" or self.state is UeState.Registered:
                return
            self._answered(arrived)
            self._set_state(UeState.Registered)
            self._send(nas.make(MessageType.RegistrationComplete), expects_reply=False)
            # The UE is done once Complete is out; the latency stamp moves to
            # the AMF's receipt of it in registration_completed().
            self._finish(proc, "success")
        elif mt is MessageType.RegistrationReject:
            if proc is None or proc.kind != "registration":
                return
            self._answered(arrived)
            self._set_state(UeState.Deregistered)
            cause = msg.int_ie(IeTag.CAUSE)
            self._finish(proc, "AuthFailure" if cause == Cause.AUTH_FAILURE else f"Rejected:{cause}",
                         end_us=arrived)
        elif mt is MessageType.PduSessionEstablishmentAccept:
            if proc is None or proc.kind != "session":
                return
            if msg.pdu_session_id != proc.params.get("pdu_session_id"):
                return
            self._answered(arrived)
            s = UeSession(msg.pdu_session_id, proc.params["dn"],
                          ipaddress.IPv4Address(msg[IeTag.UE_IP]),
                          msg.int_ie(IeTag.SESSION_REF), msg.int_ie(IeTag.QOS_CLASS), tunnel_id)
            self.sessions[s.pdu_session_id] = s
            proc.params["ue_ip"] = s.ue_ip
            self._finish(proc, "success", end_us=arrived)
        elif mt is MessageType.PduSessionEstablishmentReject:
            if proc is None or proc.kind != "session":
                return
            self._answered(arrived)
            cause = msg.int_ie(IeTag.CAUSE)
            name = Cause(cause).name if cause in Cause._value2member_map_ else str(cause)
            self._finish(proc, "NotRegistered" if cause == Cause.NOT_REGISTERED else f"Rejected:{name}",
                         end_us=arrived)
        elif mt is MessageType.PduSessionReleaseComplete:
            if proc is None or proc.kind != "release":
                return
            self._answered(arrived)
            self.sessions.pop(msg.pdu_session_id, None)
            self._finish(proc, "success", end_us=arrived)

    def registration_completed(self, at_us: int) -> None:
        """Called by the network when the AMF has received RegistrationComplete."""
        for proc in reversed(self.history):
            if proc.kind == "registration":
                if proc.ok and not proc.confirmed:
                    proc.end_us = at_us
                    proc.confirmed = True
                return
