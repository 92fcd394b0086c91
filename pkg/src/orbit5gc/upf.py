"""User plane: forwarding rules, uplink classifier, tunnel encapsulation."""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field, fields
from enum import Enum, IntEnum

TUNNEL_HEADER_LEN = 16
TUNNEL_FLAGS = 0x30
TUNNEL_MSG_GPDU = 0xFF
_TUNNEL_FORMAT = ">BBHIII"


class UpfError(Exception):
    pass


class NoSession(UpfError):
    pass


class OversizePacket(UpfError):
    pass


class DuplicateRule(UpfError):
    pass


class UnknownRule(UpfError):
    pass


class DnTarget(Enum):
    Onboard = "onboard"
    Ground = "ground"


def tunnel_header(tunnel_id: int, payload_len: int, sequence: int = 0) -> bytes:
    """flags(1) | type(1) | length(2) | tunnel_id(4) | sequence(4) | spare(4)"""
    return struct.pack(_TUNNEL_FORMAT, TUNNEL_FLAGS, TUNNEL_MSG_GPDU,
                       payload_len, tunnel_id, sequence & 0xFFFFFFFF, 0)


def parse_tunnel_header(buf: bytes) -> tuple[int, int, int]:
    """Return ``(tunnel_id, payload_len, sequence)``."""
    if len(buf) < TUNNEL_HEADER_LEN:
        raise ValueError("truncated tunnel header")
    flags, mtype, length, teid, seq, _ = struct.unpack_from(_TUNNEL_FORMAT, buf)
    if flags != TUNNEL_FLAGS or mtype != TUNNEL_MSG_GPDU:
        raise ValueError("not a G-PDU tunnel header")
    return teid, length, seq


@dataclass(frozen=True)
class ForwardingRule:
    session_id: int
    tunnel_id: int
    ue_ip: ipaddress.IPv4Address
    dn_target: DnTarget


@dataclass(frozen=True)
class ClassifierRule:
    dst_prefix: ipaddress.IPv4Network
    dn_target: DnTarget

    @property
    def priority(self) -> int:
        return self.dst_prefix.prefixlen


@dataclass
class UserPacket:
    pkt_id: int
    src_ip: ipaddress.IPv4Address
    dst_ip: ipaddress.IPv4Address
    payload_len: int
    enqueue_time: int = 0
    tunnel_id: int | None = None


@dataclass
class PacketCounters:
    in_uplink: int = 0
    in_downlink: int = 0
    delivered_onboard: int = 0
    delivered_ground: int = 0
    delivered_ue: int = 0
    dropped_no_rule: int = 0
    dropped_link: int = 0
    in_flight: int = 0
    in_uplink_bytes: int = 0
    in_downlink_bytes: int = 0
    delivered_onboard_bytes: int = 0
    delivered_ground_bytes: int = 0
    delivered_ue_bytes: int = 0
    dropped_no_rule_bytes: int = 0
    dropped_link_bytes: int = 0
    in_flight_bytes: int = 0

    OUTCOMES = ("delivered_onboard", "delivered_ground", "delivered_ue",
                "dropped_no_rule", "dropped_link")

    def admit(self, uplink: bool, size: int) -> None:
        name = "in_uplink" if uplink else "in_downlink"
        setattr(self, name, getattr(self, name) + 1)
        setattr(self, name + "_bytes", getattr(self, name + "_bytes") + size)
        self.in_flight += 1
        self.in_flight_bytes += size

    def settle(self, outcome: str, size: int) -> None:
        if outcome not in self.OUTCOMES:
            raise ValueError(outcome)
        setattr(self, outcome, getattr(self, outcome) + 1)
        setattr(self, outcome + "_bytes", getattr(self, outcome + "_bytes") + size)
        self.in_flight -= 1
        self.in_flight_bytes -= size

    def balanced(self) -> bool:
        return conservation_holds(self.snapshot())

    def snapshot(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def conservation_holds(c: dict) -> bool:
    for suffix in ("", "_bytes"):
        lhs = c["in_uplink" + suffix] + c["in_downlink" + suffix]
        rhs = sum(c[o + suffix] for o in PacketCounters.OUTCOMES) + c["in_flight" + suffix]
        if lhs != rhs:
            return False
    return True


def longest_prefix_match(rules, dst_ip) -> DnTarget:
    """Reference classifier: brute-force scan of every rule."""
    best = None
    for rule in rules:
        if dst_ip in rule.dst_prefix and (best is None or rule.priority > best.priority):
            best = rule
    if best is None:
        raise NoSession(f"no classifier rule covers {dst_ip}")
    return best.dn_target


# ---------------------------------------------------------------------------
# N4-like rule messages: op(1) | session_id(4) | tunnel_id(4) | ue_ip(4) | dn(1)
# ---------------------------------------------------------------------------

class N4Op(IntEnum):
    Install = 1
    Remove = 2


N4_FORMAT = ">BIIIB"
N4_LEN = struct.calcsize(N4_FORMAT)


@dataclass(frozen=True)
class N4Message:
    op: N4Op
    session_id: int
    tunnel_id: int
    ue_ip: ipaddress.IPv4Address
    dn_index: int

    def encode(self) -> bytes:
        return struct.pack(N4_FORMAT, self.op, self.session_id, self.tunnel_id,
                           int(self.ue_ip), self.dn_index)

    @classmethod
    def decode(cls, buf: bytes) -> "N4Message":
        if len(buf) != N4_LEN:
            raise ValueError(f"N4 message must be {N4_LEN} bytes, got {len(buf)}")
        op, sid, teid, ip, dn = struct.unpack(N4_FORMAT, buf)
        try:
            op = N4Op(op)
        except ValueError:
            raise ValueError(f"unknown N4 operation {op}") from None
        return cls(op, sid, teid, ipaddress.IPv4Address(ip), dn)


DEFAULT_CLASSIFIER = (
    ("10.64.0.0/16", DnTarget.Onboard),
    ("0.0.0.0/0", DnTarget.Ground),
)


@dataclass
class Upf:
    mtu: int = 1500
    classifier: list[ClassifierRule] = field(default_factory=list)
    dn_targets: dict[int, DnTarget] = field(
        default_factory=lambda: {0: DnTarget.Ground, 1: DnTarget.Onboard})
    counters: PacketCounters = field(default_factory=PacketCounters)
    rules: dict[int, ForwardingRule] = field(default_factory=dict)

    def __post_init__(self):
        given = self.classifier or [ClassifierRule(ipaddress.IPv4Network(p), t)
                                    for p, t in DEFAULT_CLASSIFIER]
        self.classifier = []
        for rule in given:
            self.add_classifier_rule(rule)
        if not any(r.dst_prefix.prefixlen == 0 for r in self.classifier):
            self.add_classifier_rule(
                ClassifierRule(ipaddress.IPv4Network("0.0.0.0/0"), DnTarget.Ground))
        self._by_tunnel = {r.tunnel_id: r for r in self.rules.values()}
        self._by_ip = {r.ue_ip: r for r in self.rules.values()}

    def add_classifier_rule(self, rule: ClassifierRule) -> None:
        if any(r.dst_prefix == rule.dst_prefix for r in self.classifier):
            raise DuplicateRule(f"classifier prefix {rule.dst_prefix} already present")
        self.classifier.append(rule)
        self.classifier.sort(key=lambda r: -r.priority)

    # -- rule table ---------------------------------------------------------

    def install_rule(self, rule: ForwardingRule) -> None:
        if rule.session_id in self.rules:
            raise DuplicateRule(f"session {rule.session_id} already has a rule")
        if rule.ue_ip in self._by_ip:
            raise DuplicateRule(f"UE address {rule.ue_ip} already has a rule")
        if rule.tunnel_id in self._by_tunnel:
            raise DuplicateRule(f"tunnel {rule.tunnel_id} already has a rule")
        self.rules[rule.session_id] = rule
        self._by_tunnel[rule.tunnel_id] = rule
        self._by_ip[rule.ue_ip] = rule

    def remove_rule(self, rule: ForwardingRule) -> ForwardingRule:
        current = self.rules.get(rule.session_id)
        if current is None:
            raise UnknownRule(f"no rule for session {rule.session_id}")
        del self.rules[rule.session_id]
        del self._by_tunnel[current.tunnel_id]
        del self._by_ip[current.ue_ip]
        return current

    def handle_n4(self, wire: bytes) -> ForwardingRule:
        msg = N4Message.decode(wire)
        if msg.dn_index not in self.dn_targets:
            raise UnknownRule(f"unknown data network index {msg.dn_index}")
        rule = ForwardingRule(msg.session_id, msg.tunnel_id, msg.ue_ip,
                              self.dn_targets[msg.dn_index])
        if msg.op is N4Op.Install:
            self.install_rule(rule)
            return rule
        return self.remove_rule(rule)

    def rule_for_tunnel(self, tunnel_id: int) -> ForwardingRule | None:
        return self._by_tunnel.get(tunnel_id)

    def rule_for_ue(self, ue_ip) -> ForwardingRule | None:
        return self._by_ip.get(ipaddress.IPv4Address(ue_ip))

    # -- packet path --------------------------------------------------------

    def classify(self, dst_ip) -> DnTarget:
        dst_ip = ipaddress.IPv4Address(dst_ip)
        for rule in self.classifier:  # sorted longest prefix first
            if dst_ip in rule.dst_prefix:
                return rule.dn_target
        raise AssertionError("classifier lacks a catch-all")

    def classify_uplink(self, pkt: UserPacket) -> DnTarget:
        if pkt.tunnel_id is None or pkt.tunnel_id not in self._by_tunnel:
            self.counters.settle("dropped_no_rule", pkt.payload_len)
            raise NoSession(f"no rule for tunnel {pkt.tunnel_id}")
        return self.classify(pkt.dst_ip)

    def forward_downlink(self, pkt: UserPacket) -> tuple[int, int]:
        """Return ``(tunnel_id, bytes on the wire)`` for a packet bound to a UE."""
        if pkt.payload_len + TUNNEL_HEADER_LEN > self.mtu:
            raise OversizePacket(
                f"{pkt.payload_len} + {TUNNEL_HEADER_LEN} exceeds MTU {self.mtu}")
        rule = self._by_ip.get(ipaddress.IPv4Address(pkt.dst_ip))
        if rule is None:
            self.counters.settle("dropped_no_rule", pkt.payload_len)
            raise NoSession(f"no rule for UE address {pkt.dst_ip}")
        pkt.tunnel_id = rule.tunnel_id
        return rule.tunnel_id, pkt.payload_len + TUNNEL_HEADER_LEN
