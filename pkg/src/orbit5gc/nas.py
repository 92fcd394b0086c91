"""
Minimal NAS-like signaling codec.

Wire layout::

    0x7E | type code | { tag(1) | length(2, big-endian) | value }*

Message type codes run 0x41..0x4C in the order of :class:`MessageType`.
Each type has a fixed table of mandatory and optional information
elements (IEs); see ``IE_TABLE`` and ``docs/wire-formats.md``.
"""

from __future__ import annotations

import ipaddress
import re
import struct
from dataclasses import dataclass
from enum import IntEnum

PROTOCOL_DISCRIMINATOR = 0x7E
HEADER_LEN = 2
IE_HEADER_LEN = 3
MAX_IE_LEN = 0xFFFF
MAX_MESSAGE_LEN = 0xFFFF


class NasError(Exception):
    """Base class for codec errors."""


class MalformedMessage(NasError):
    pass


class MissingMandatoryIe(MalformedMessage):
    def __init__(self, message_type: "MessageType", tag: "IeTag"):
        super().__init__(f"{message_type.name} lacks mandatory IE {tag.name}")
        self.message_type = message_type
        self.tag = tag


class IeTooLong(NasError):
    pass


class InvalidMessage(NasError):
    """Raised by the encoder for messages that break the type invariants."""


class MessageType(IntEnum):
    RegistrationRequest = 0x41
    AuthenticationRequest = 0x42
    AuthenticationResponse = 0x43
    RegistrationAccept = 0x44
    RegistrationComplete = 0x45
    RegistrationReject = 0x46
    DeregistrationRequest = 0x47
    PduSessionEstablishmentRequest = 0x48
    PduSessionEstablishmentAccept = 0x49
    PduSessionEstablishmentReject = 0x4A
    PduSessionReleaseRequest = 0x4B
    PduSessionReleaseComplete = 0x4C


class IeTag(IntEnum):
    SUPI = 0x01
    NONCE = 0x02
    SEQUENCE = 0x03
    AUTH_RESPONSE = 0x04
    CAUSE = 0x05
    PDU_SESSION_ID = 0x06
    DNN = 0x07
    SESSION_REF = 0x08
    UE_IP = 0x09
    QOS_CLASS = 0x0A
    SLICE_ID = 0x0B


class Cause(IntEnum):
    AUTH_FAILURE = 0x03
    NOT_REGISTERED = 0x0A
    UNKNOWN_DNN = 0x1B
    POOL_EXHAUSTED = 0x1A
    PROTOCOL_ERROR = 0x6F


# IE value kinds: fixed size in bytes, or a validator for variable ones.
_FIXED_LEN = {
    IeTag.SUPI: 15,
    IeTag.NONCE: 16,
    IeTag.SEQUENCE: 4,
    IeTag.AUTH_RESPONSE: 32,
    IeTag.CAUSE: 1,
    IeTag.PDU_SESSION_ID: 1,
    IeTag.SESSION_REF: 4,
    IeTag.UE_IP: 4,
    IeTag.QOS_CLASS: 1,
    IeTag.SLICE_ID: 1,
}

_T = IeTag
# message type -> (mandatory, optional)
IE_TABLE: dict[MessageType, tuple[frozenset[IeTag], frozenset[IeTag]]] = {
    MessageType.RegistrationRequest: (frozenset({_T.SUPI}), frozenset({_T.SLICE_ID})),
    MessageType.AuthenticationRequest: (frozenset({_T.NONCE, _T.SEQUENCE}), frozenset()),
    MessageType.AuthenticationResponse: (frozenset({_T.AUTH_RESPONSE}), frozenset()),
    MessageType.RegistrationAccept: (frozenset(), frozenset({_T.SLICE_ID})),
    MessageType.RegistrationComplete: (frozenset(), frozenset()),
    MessageType.RegistrationReject: (frozenset({_T.CAUSE}), frozenset()),
    MessageType.DeregistrationRequest: (frozenset({_T.SUPI}), frozenset()),
    MessageType.PduSessionEstablishmentRequest: (
        frozenset({_T.PDU_SESSION_ID, _T.DNN}),
        frozenset({_T.QOS_CLASS, _T.SLICE_ID}),
    ),
    MessageType.PduSessionEstablishmentAccept: (
        frozenset({_T.PDU_SESSION_ID, _T.SESSION_REF, _T.UE_IP, _T.QOS_CLASS}),
        frozenset({_T.SLICE_ID}),
    ),
    MessageType.PduSessionEstablishmentReject: (
        frozenset({_T.PDU_SESSION_ID, _T.CAUSE}),
        frozenset(),
    ),
    MessageType.PduSessionReleaseRequest: (frozenset({_T.PDU_SESSION_ID}), frozenset()),
    MessageType.PduSessionReleaseComplete: (frozenset({_T.PDU_SESSION_ID}), frozenset()),
}
del _T

_DNN_RE = re.compile(rb"[A-Za-z0-9.\-]{1,63}\Z")


def is_valid_supi(supi: str) -> bool:
    return len(supi) == 15 and supi.isascii() and supi.isdigit()


def _check_value(msg_type: MessageType, tag: IeTag, value: bytes) -> None:
    want = _FIXED_LEN.get(tag)
    if want is not None and len(value) != want:
        raise MalformedMessage(
            f"{msg_type.name}: IE {tag.name} must be {want} bytes, got {len(value)}"
        )
    if tag is IeTag.SUPI and not (value.isascii() and value.isdigit()):
        raise MalformedMessage(f"{msg_type.name}: SUPI must be 15 ASCII digits")
    if tag is IeTag.DNN and not _DNN_RE.match(value):
        raise MalformedMessage(f"{msg_type.name}: bad DNN {value!r}")


@dataclass(frozen=True)
class NasMessage:
    message_type: MessageType
    ies: tuple[tuple[int, bytes], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "message_type", MessageType(self.message_type))
        object.__setattr__(self, "ies", tuple((int(t), bytes(v)) for t, v in self.ies))

    def get(self, tag: IeTag) -> bytes | None:
        for t, v in self.ies:
            if t == tag:
                return v
        return None

    def __getitem__(self, tag: IeTag) -> bytes:
        value = self.get(tag)
        if value is None:
            raise KeyError(tag)
        return value

    # Typed accessors for the IEs the network functions read.
    @property
    def supi(self) -> str:
        return self[IeTag.SUPI].decode("ascii")

    @property
    def dnn(self) -> str:
        return self[IeTag.DNN].decode("ascii")

    @property
    def pdu_session_id(self) -> int:
        return self[IeTag.PDU_SESSION_ID][0]

    def int_ie(self, tag: IeTag) -> int:
        return int.from_bytes(self[tag], "big")

    def validate(self) -> None:
        """Check type invariants; raise :class:`InvalidMessage` if broken."""
        mandatory, optional = IE_TABLE[self.message_type]
        seen = set()
        for tag, value in self.ies:
            if tag in seen:
                raise InvalidMessage(f"duplicate IE tag 0x{tag:02x}")
            seen.add(tag)
            try:
                itag = IeTag(tag)
            except ValueError:
                raise InvalidMessage(f"unknown IE tag 0x{tag:02x}") from None
            if itag not in mandatory and itag not in optional:
                raise InvalidMessage(f"IE {itag.name} not allowed in {self.message_type.name}")
            if len(value) > MAX_IE_LEN:
                raise IeTooLong(f"IE {itag.name} is {len(value)} bytes")
            try:
                _check_value(self.message_type, itag, value)
            except MalformedMessage as exc:
                raise InvalidMessage(str(exc)) from None
        missing = mandatory - seen
        if missing:
            raise InvalidMessage(
                f"{self.message_type.name} lacks mandatory IE "
                + ", ".join(sorted(t.name for t in missing))
            )


def encoded_length(msg: NasMessage) -> int:
    return HEADER_LEN + sum(IE_HEADER_LEN + len(v) for _, v in msg.ies)


def encode(msg: NasMessage) -> bytes:
    for _, value in msg.ies:
        if len(value) > MAX_IE_LEN:
            raise IeTooLong(f"IE value of {len(value)} bytes exceeds {MAX_IE_LEN}")
    msg.validate()
    if encoded_length(msg) > MAX_MESSAGE_LEN:
        raise InvalidMessage("encoded message exceeds 65535 bytes")
    parts = [bytes((PROTOCOL_DISCRIMINATOR, msg.message_type))]
    for tag, value in msg.ies:
        parts.append(struct.pack(">BH", tag, len(value)))
        parts.append(value)
    return b"".join(parts)


def frame_length(buf: bytes) -> int:
    """Length of the message at the start of ``buf`` (for stream framing).

    Walks the TLV headers only; raises :class:`MalformedMessage` if the
    buffer holds less than one complete TLV chain. Since a message carries
    no overall length, the frame ends where the buffer ends or where the
    next byte is a protocol discriminator at an IE boundary.
    """
    if len(buf) < HEADER_LEN or buf[0] != PROTOCOL_DISCRIMINATOR:
        raise MalformedMessage("no message header")
    pos = HEADER_LEN
    while pos < len(buf) and buf[pos] != PROTOCOL_DISCRIMINATOR:
        if pos + IE_HEADER_LEN > len(buf):
            raise MalformedMessage("truncated IE header")
        (length,) = struct.unpack_from(">H", buf, pos + 1)
        pos += IE_HEADER_LEN + length
        if pos > len(buf):
            raise MalformedMessage("IE length overruns buffer")
    return pos


def decode(buf: bytes) -> NasMessage:
    buf = bytes(buf)
    if len(buf) < HEADER_LEN:
        raise MalformedMessage(f"buffer too short ({len(buf)} bytes)")
    if len(buf) > MAX_MESSAGE_LEN:
        raise MalformedMessage("buffer exceeds 65535 bytes")
    if buf[0] != PROTOCOL_DISCRIMINATOR:
        raise MalformedMessage(f"bad protocol discriminator 0x{buf[0]:02x}")
    try:
        msg_type = MessageType(buf[1])
    except ValueError:
        raise MalformedMessage(f"unknown message type 0x{buf[1]:02x}") from None

    mandatory, optional = IE_TABLE[msg_type]
    ies = []
    seen = set()
    pos = HEADER_LEN
    while pos < len(buf):
        if pos + IE_HEADER_LEN > len(buf):
            raise MalformedMessage("truncated IE header")
        tag, length = struct.unpack_from(">BH", buf, pos)
        pos += IE_HEADER_LEN
        if pos + length > len(buf):
            raise MalformedMessage(
                f"IE 0x{tag:02x} declares {length} bytes, {len(buf) - pos} remain"
            )
        value = buf[pos:pos + length]
        pos += length
        try:
            itag = IeTag(tag)
        except ValueError:
            raise MalformedMessage(f"unknown IE tag 0x{tag:02x}") from None
        if itag not in mandatory and itag not in optional:
            raise MalformedMessage(f"IE {itag.name} not allowed in {msg_type.name}")
        if itag in seen:
            raise MalformedMessage(f"duplicate IE {itag.name}")
        seen.add(itag)
        _check_value(msg_type, itag, value)
        ies.append((tag, value))

    for tag in sorted(mandatory):
        if tag not in seen:
            raise MissingMandatoryIe(msg_type, tag)
    return NasMessage(msg_type, tuple(ies))


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------

def make(message_type: MessageType, **fields) -> NasMessage:
    """Build a message from typed keyword fields, in keyword order.

    >>> encode(make(MessageType.RegistrationRequest, supi="001010000000001"))[:5].hex()
    '7e4101000f'
    """
    ies = []
    for name, value in fields.items():
        if value is None:
            continue
        tag = IeTag[name.upper()]
        ies.append((tag, _field_to_bytes(tag, value)))
    return NasMessage(message_type, tuple(ies))


def _field_to_bytes(tag: IeTag, value) -> bytes:
    if isinstance(value, (bytes, bytearray)):
        return bytes(value)
    if tag in (IeTag.SUPI, IeTag.DNN):
        return str(value).encode("ascii")
    if tag is IeTag.UE_IP:
        return ipaddress.IPv4Address(value).packed
    if tag in (IeTag.NONCE, IeTag.AUTH_RESPONSE):
        raise TypeError(f"{tag.name} takes bytes")
    return int(value).to_bytes(_FIXED_LEN[tag], "big")


# ---------------------------------------------------------------------------
# Canonical text form, used by the conformance-vector files
# ---------------------------------------------------------------------------

_STRING_TAGS = (IeTag.SUPI, IeTag.DNN)
_HEX_TAGS = (IeTag.NONCE, IeTag.AUTH_RESPONSE)


def to_text(msg: NasMessage) -> str:
    """Render e.g. ``RegistrationRequest{supi="001010000000001"}``."""
    parts = []
    for tag, value in msg.ies:
        itag = IeTag(tag)
        key = itag.name.lower()
        if itag in _STRING_TAGS:
            parts.append(f'{key}="{value.decode("ascii")}"')
        elif itag in _HEX_TAGS:
            parts.append(f"{key}=0x{value.hex()}")
        elif itag is IeTag.UE_IP:
            parts.append(f"{key}={ipaddress.IPv4Address(value)}")
        else:
            parts.append(f"{key}={int.from_bytes(value, 'big')}")
    return f"{msg.message_type.name}{{{', '.join(parts)}}}"


_TEXT_RE = re.compile(r"^(\w+)\{(.*)\}$")
_FIELD_RE = re.compile(r'\s*(\w+)=("[^"]*"|[^,]+)\s*(?:,|$)')


def from_text(text: str) -> NasMessage:
    m = _TEXT_RE.match(text.strip())
    if not m:
        raise ValueError(f"not a canonical message: {text!r}")
    try:
        msg_type = MessageType[m.group(1)]
    except KeyError:
        raise ValueError(f"unknown message type {m.group(1)!r}") from None
    body = m.group(2)
    ies = []
    pos = 0
    while pos < len(body):
        fm = _FIELD_RE.match(body, pos)
        if not fm:
            raise ValueError(f"cannot parse fields at {body[pos:]!r}")
        pos = fm.end()
        tag = IeTag[fm.group(1).upper()]
        raw = fm.group(2).strip()
        if tag in _STRING_TAGS:
            value = raw.strip('"').encode("ascii")
        elif tag in _HEX_TAGS:
            value = bytes.fromhex(raw.removeprefix("0x"))
        else:
            value = _field_to_bytes(tag, raw if tag is IeTag.UE_IP else int(raw))
        ies.append((tag, value))
    return NasMessage(msg_type, tuple(ies))


# ---------------------------------------------------------------------------
# Conformance vectors
# ---------------------------------------------------------------------------

@dataclass
class VectorResult:
    line_no: int
    ok: bool
    detail: str = ""


def check_vector_line(hex_bytes: str, text: str) -> str | None:
    """Return None if the vector holds, else a description of the failure.

    ``text`` is either a canonical message or ``!ErrorName`` for a buffer
    that must be rejected with that error class.
    """
    buf = bytes.fromhex(hex_bytes)
    if text.startswith("!"):
        want = text[1:]
        try:
            got = decode(buf)
        except NasError as exc:
            names = {cls.__name__ for cls in type(exc).__mro__}
            return None if want in names else f"raised {type(exc).__name__}, expected {want}"
        return f"decoded {to_text(got)}, expected {want}"
    expected = from_text(text)
    try:
        got = decode(buf)
    except NasError as exc:
        return f"decode failed: {exc}"
    if got != expected:
        return f"decoded {to_text(got)}"
    if encode(expected) != buf:
        return f"encodes to {encode(expected).hex()}"
    if to_text(got) != text:
        return f"text form is {to_text(got)}"
    return None


def check_vectors(lines) -> list[VectorResult]:
    results = []
    for no, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        hex_bytes, sep, text = line.partition("\t")
        if not sep:
            results.append(VectorResult(no, False, "missing TAB separator"))
            continue
        try:
            problem = check_vector_line(hex_bytes.strip(), text.strip())
        except ValueError as exc:
            problem = f"unparseable record: {exc}"
        results.append(VectorResult(no, problem is None, problem or ""))
    return results
