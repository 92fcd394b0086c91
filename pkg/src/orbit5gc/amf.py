"""Access and mobility management: registration, authentication, session relay."""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable

from . import nas
from .nas import Cause, IeTag, MessageType, NasMessage
from .smf import PoolExhausted, Smf, UnknownDataNetwork, UnknownSession

DEFAULT_AUTH_TIMEOUT_US = 6_000_000
NONCE_LEN = 16

# Declared serialized size of one context record (bytes):
# supi 15, state 1, key id 4, sequence 4, nonce 16, serving gNB 4,
# ue_ran_id 4, registered_at 8, slice id 1, session count 2.
CONTEXT_BYTES = 15 + 1 + 4 + 4 + 16 + 4 + 4 + 8 + 1 + 2
SESSION_REF_BYTES = 4


class AmfError(Exception):
    pass


class UnknownUe(AmfError):
    pass


class UnexpectedMessage(AmfError):
    pass


class UeState(Enum):
    Deregistered = "Deregistered"
    AuthPending = "AuthPending"
    Registered = "Registered"


def compute_auth_response(key: bytes, nonce: bytes, sequence: int = 0) -> bytes:
    """HMAC-SHA256 over ``nonce || sequence`` (32-bit big-endian)."""
    if not key or not nonce:
        raise ValueError("key and nonce must be nonempty")
    return hmac.new(key, nonce + struct.pack(">I", sequence & 0xFFFFFFFF),
                    hashlib.sha256).digest()


# ---------------------------------------------------------------------------
# N2 framing: procedure(1) | gnb_id(4) | ue_ran_id(4) | length(2) | NAS payload
# ---------------------------------------------------------------------------

class NgapProcedure(IntEnum):
    InitialUeMessage = 1
    DownlinkNasTransport = 2
    UplinkNasTransport = 3
    InitialContextSetup = 4


NGAP_HEADER = struct.Struct(">BIIH")


@dataclass(frozen=True)
class NgapEnvelope:
    procedure: NgapProcedure
    gnb_id: int
    ue_ran_id: int
    nas_payload: bytes

    def encode(self) -> bytes:
        return NGAP_HEADER.pack(self.procedure, self.gnb_id, self.ue_ran_id,
                                len(self.nas_payload)) + self.nas_payload

    @classmethod
    def decode(cls, buf: bytes) -> "NgapEnvelope":
        if len(buf) < NGAP_HEADER.size:
            raise ValueError("truncated N2 header")
        proc, gnb, ran, length = NGAP_HEADER.unpack_from(buf)
        if len(buf) != NGAP_HEADER.size + length:
            raise ValueError(f"N2 payload length {length} does not match buffer")
        return cls(NgapProcedure(proc), gnb, ran, bytes(buf[NGAP_HEADER.size:]))

    @property
    def nas(self) -> NasMessage:
        return nas.decode(self.nas_payload)

    def __len__(self) -> int:
        return NGAP_HEADER.size + len(self.nas_payload)


@dataclass
class SecurityContext:
    key_id: int
    sequence: int = 0
    nonce: bytes | None = None
    accepted: bytes | None = None


@dataclass
class UeContext:
    supi: str
    security: SecurityContext
    serving_gnb: int
    ue_ran_id: int
    state: UeState = UeState.Deregistered
    sessions: dict[int, int] = field(default_factory=dict)  # pdu id -> SMF session id
    registered_at: int | None = None
    auth_started_at: int | None = None
    complete: bool = False
    slice_id: int = 0

    @property
    def session_ids(self) -> set[int]:
        return set(self.sessions.values())


@dataclass
class Subscriber:
    key_id: int
    key: bytes


@dataclass
class Outbound:
    envelope: NgapEnvelope
    message: NasMessage
    via_smf: bool = False


class Amf:
    """NAS termination and registration state machine.

    ``nonce_source`` returns fresh challenge bytes; scenario runs pass a
    seeded generator so traces stay reproducible.
    """

    def __init__(self, smf: Smf, subscribers: dict[str, Subscriber],
                 nonce_source: Callable[[int], bytes],
                 auth_timeout_us: int = DEFAULT_AUTH_TIMEOUT_US):
        self.smf = smf
        self.subscribers = subscribers
        self.nonce_source = nonce_source
        self.auth_timeout_us = auth_timeout_us
        self.contexts: dict[str, UeContext] = {}
        self._by_ran: dict[tuple[int, int], str] = {}
        self.state_log: list[tuple[str, UeState]] = []

    # -- table helpers ------------------------------------------------------

    def state_of(self, supi: str) -> UeState:
        ctx = self.contexts.get(supi)
        return ctx.state if ctx else UeState.Deregistered

    def _set_state(self, ctx: UeContext, state: UeState) -> None:
        ctx.state = state
        self.state_log.append((ctx.supi, state))

    def _remove(self, ctx: UeContext) -> None:
        released = self.smf.release_all(ctx.supi)
        for s in released:
            ctx.sessions = {k: v for k, v in ctx.sessions.items() if v != s.session_id}
        self.contexts.pop(ctx.supi, None)
        self._by_ran.pop((ctx.serving_gnb, ctx.ue_ran_id), None)
        ctx.state = UeState.Deregistered
        self.state_log.append((ctx.supi, UeState.Deregistered))

    def context_table_stats(self) -> tuple[int, int, int]:
        active = len(self.contexts)
        registered = sum(1 for c in self.contexts.values() if c.state is UeState.Registered)
        size = sum(CONTEXT_BYTES + SESSION_REF_BYTES * len(c.sessions)
                   for c in self.contexts.values())
        return active, registered, size

    def _reply(self, ctx_or_env, msg: NasMessage, procedure=NgapProcedure.DownlinkNasTransport,
               via_smf: bool = False) -> Outbound:
        if isinstance(ctx_or_env, UeContext):
            gnb, ran = ctx_or_env.serving_gnb, ctx_or_env.ue_ran_id
        else:
            gnb, ran = ctx_or_env.gnb_id, ctx_or_env.ue_ran_id
        env = NgapEnvelope(procedure, gnb, ran, nas.encode(msg))
        return Outbound(env, msg, via_smf)

    # -- timers -------------------------------------------------------------

    def expire_auth(self, supi: str, nonce: bytes, now: int) -> bool:
        """Drop a context still waiting on the challenge ``nonce``."""
        ctx = self.contexts.get(supi)
        if ctx is None or ctx.state is not UeState.AuthPending or ctx.security.nonce != nonce:
            return False
        if now - ctx.auth_started_at < self.auth_timeout_us:
            return False
        self._remove(ctx)
        return True

    # -- uplink -------------------------------------------------------------

    def handle_uplink(self, env: NgapEnvelope, now: int) -> list[Outbound]:
        msg = nas.decode(env.nas_payload)
        mt = msg.message_type
        if mt is MessageType.RegistrationRequest:
            return self._registration_request(env, msg, now)

        supi = self._by_ran.get((env.gnb_id, env.ue_ran_id))
        if supi is None and IeTag.SUPI in {t for t, _ in msg.ies}:
            supi = msg.supi if msg.supi in self.contexts else None
        ctx = self.contexts.get(supi) if supi else None
        if ctx is None:
            raise UnknownUe(f"{mt.name} from gNB {env.gnb_id} / UE {env.ue_ran_id}")

        if mt is MessageType.AuthenticationResponse:
            return self._auth_response(ctx, msg, now)
        if mt is MessageType.RegistrationComplete:
            if ctx.state is not UeState.Registered:
                raise UnexpectedMessage(f"RegistrationComplete in {ctx.state.name}")
            ctx.complete = True
            return []
        if mt is MessageType.DeregistrationRequest:
            self._remove(ctx)
            return []
        if mt is MessageType.PduSessionEstablishmentRequest:
            return self._session_request(ctx, msg)
        if mt is MessageType.PduSessionReleaseRequest:
            return self._release_request(ctx, msg)
        raise UnexpectedMessage(f"{mt.name} is not an uplink message")

    def _registration_request(self, env, msg, now):
        supi = msg.supi
        sub = self.subscribers.get(supi)
        old = self.contexts.get(supi)
        if old is not None:
            self._remove(old)
        if sub is None:
            reject = nas.make(MessageType.RegistrationReject, cause=Cause.AUTH_FAILURE)
            return [self._reply(env, reject)]
        seq = (old.security.sequence + 1) & 0xFFFFFFFF if old else 1
        nonce = bytes(self.nonce_source(NONCE_LEN))
        ctx = UeContext(supi, SecurityContext(sub.key_id, seq, nonce),
                        env.gnb_id, env.ue_ran_id, auth_started_at=now,
                        slice_id=msg.int_ie(IeTag.SLICE_ID) if msg.get(IeTag.SLICE_ID) else 0)
        self.contexts[supi] = ctx
        self._by_ran[(env.gnb_id, env.ue_ran_id)] = supi
        self._set_state(ctx, UeState.AuthPending)
        challenge = nas.make(MessageType.AuthenticationRequest, nonce=nonce, sequence=seq)
        return [self._reply(ctx, challenge)]

    def _auth_response(self, ctx, msg, now):
        got = msg[IeTag.AUTH_RESPONSE]
        sec = ctx.security
        if ctx.state is UeState.Registered:
            # Retransmitted response for the challenge already accepted.
            if sec.accepted is not None and hmac.compare_digest(got, sec.accepted):
                return [self._accept(ctx)]
            raise UnexpectedMessage("AuthenticationResponse while Registered")
        key = self.subscribers[ctx.supi].key
        expected = compute_auth_response(key, sec.nonce, sec.sequence)
        if not hmac.compare_digest(got, expected):
            out = self._reply(ctx, nas.make(MessageType.RegistrationReject,
                                            cause=Cause.AUTH_FAILURE))
            self._remove(ctx)
            return [out]
        sec.accepted = expected
        sec.nonce = None
        ctx.registered_at = now
        self._set_state(ctx, UeState.Registered)
        return [self._accept(ctx)]

    def _accept(self, ctx):
        accept = nas.make(MessageType.RegistrationAccept,
                          slice_id=ctx.slice_id if ctx.slice_id else None)
        return self._reply(ctx, accept, NgapProcedure.InitialContextSetup)

    def _session_request(self, ctx, msg):
        pdu_id = msg.pdu_session_id
        if ctx.state is not UeState.Registered:
            reject = nas.make(MessageType.PduSessionEstablishmentReject,
                              pdu_session_id=pdu_id, cause=Cause.NOT_REGISTERED)
            return [self._reply(ctx, reject)]
        qos = msg.int_ie(IeTag.QOS_CLASS) if msg.get(IeTag.QOS_CLASS) else 9
        try:
            acc = self.smf.establish_session(ctx.supi, msg.dnn, qos)
        except (UnknownDataNetwork, PoolExhausted) as exc:
            cause = Cause.UNKNOWN_DNN if isinstance(exc, UnknownDataNetwork) else Cause.POOL_EXHAUSTED
            reject = nas.make(MessageType.PduSessionEstablishmentReject,
                              pdu_session_id=pdu_id, cause=cause)
            return [self._reply(ctx, reject, via_smf=True)]
        ctx.sessions[pdu_id] = acc.session_id
        accept = nas.make(MessageType.PduSessionEstablishmentAccept,
                          pdu_session_id=pdu_id, session_ref=acc.session_id,
                          ue_ip=acc.ue_ip, qos_class=acc.qos_class)
        return [self._reply(ctx, accept, via_smf=True)]

    def _release_request(self, ctx, msg):
        pdu_id = msg.pdu_session_id
        sid = ctx.sessions.pop(pdu_id, None)
        if sid is not None:
            try:
                self.smf.release_session(sid)
            except UnknownSession:
                pass
        done = nas.make(MessageType.PduSessionReleaseComplete, pdu_session_id=pdu_id)
        return [self._reply(ctx, done, via_smf=sid is not None)]
