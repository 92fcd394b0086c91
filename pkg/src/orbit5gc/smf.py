"""Session management: UE address pool, PDU sessions, and N4 rule pushes."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from enum import Enum

from .upf import DnTarget, N4Message, N4Op, Upf


class SmfError(Exception):
    pass


class UnknownDataNetwork(SmfError):
    pass


class PoolExhausted(SmfError):
    pass


class UnknownSession(SmfError):
    pass


class SessionState(Enum):
    Activating = "Activating"
    Active = "Active"
    Released = "Released"


@dataclass(frozen=True)
class DataNetwork:
    name: str
    target: DnTarget
    index: int


DEFAULT_DATA_NETWORKS = (
    DataNetwork("internet", DnTarget.Ground, 0),
    DataNetwork("onboard", DnTarget.Onboard, 1),
)


class IpPool:
    """Sequential allocator with LIFO reuse.

    Offset 0 is the network address and offset 1 the gateway; the
    broadcast address is never issued either.
    """

    FIRST_OFFSET = 2

    def __init__(self, cidr: str = "10.45.0.0/16"):
        self.network = ipaddress.IPv4Network(cidr)
        if self.network.num_addresses < 4:
            raise ValueError(f"pool {cidr} has no usable addresses")
        self.next_offset = self.FIRST_OFFSET
        self.free_list: list[ipaddress.IPv4Address] = []
        self.allocated: set[ipaddress.IPv4Address] = set()

    @property
    def size(self) -> int:
        return self.network.num_addresses - 3

    @property
    def never_issued(self) -> int:
        return self.network.num_addresses - 1 - self.next_offset

    def allocate(self) -> ipaddress.IPv4Address:
        if self.free_list:
            addr = self.free_list.pop()
        elif self.next_offset < self.network.num_addresses - 1:
            addr = self.network[self.next_offset]
            self.next_offset += 1
        else:
            raise PoolExhausted(f"no free address in {self.network}")
        self.allocated.add(addr)
        return addr

    def release(self, addr: ipaddress.IPv4Address) -> None:
        if addr not in self.allocated:
            raise ValueError(f"{addr} is not allocated")
        self.allocated.remove(addr)
        self.free_list.append(addr)


@dataclass
class PduSession:
    session_id: int
    supi: str
    dn_name: str
    ue_ip: ipaddress.IPv4Address
    tunnel_id: int
    qos_class: int
    state: SessionState = SessionState.Activating


@dataclass(frozen=True)
class SessionAccept:
    """Parameters the AMF copies into PduSessionEstablishmentAccept."""
    session_id: int
    ue_ip: ipaddress.IPv4Address
    qos_class: int
    tunnel_id: int
    dn_name: str
    existing: bool = False


@dataclass
class Smf:
    upf: Upf
    pool: IpPool = field(default_factory=IpPool)
    data_networks: tuple[DataNetwork, ...] = DEFAULT_DATA_NETWORKS
    sessions: dict[int, PduSession] = field(default_factory=dict)
    n4_log: list[bytes] = field(default_factory=list)
    _next_session: int = 1
    _next_tunnel: int = 1

    def data_network(self, name: str) -> DataNetwork:
        for dn in self.data_networks:
            if dn.name == name:
                return dn
        raise UnknownDataNetwork(name)

    def active_sessions(self) -> list[PduSession]:
        return [s for s in self.sessions.values() if s.state is SessionState.Active]

    def find_active(self, supi: str, dn_name: str) -> PduSession | None:
        for s in self.sessions.values():
            if s.supi == supi and s.dn_name == dn_name and s.state is SessionState.Active:
                return s
        return None

    def _push(self, msg: N4Message) -> None:
        wire = msg.encode()
        self.n4_log.append(wire)
        self.upf.handle_n4(wire)

    def establish_session(self, supi: str, dn_name: str, qos_class: int = 9) -> SessionAccept:
        dn = self.data_network(dn_name)
        existing = self.find_active(supi, dn_name)
        if existing is not None:
            return SessionAccept(existing.session_id, existing.ue_ip, existing.qos_class,
                                 existing.tunnel_id, dn_name, existing=True)
        ue_ip = self.pool.allocate()
        session = PduSession(self._next_session, supi, dn_name, ue_ip,
                             self._next_tunnel, qos_class & 0xFF)
        self._next_session += 1
        self._next_tunnel += 1
        self.sessions[session.session_id] = session
        self._push(N4Message(N4Op.Install, session.session_id, session.tunnel_id,
                             ue_ip, dn.index))
        session.state = SessionState.Active
        return SessionAccept(session.session_id, ue_ip, session.qos_class,
                             session.tunnel_id, dn_name)

    def release_session(self, session_id: int) -> PduSession:
        session = self.sessions.get(session_id)
        if session is None or session.state is not SessionState.Active:
            raise UnknownSession(session_id)
        self._push(N4Message(N4Op.Remove, session.session_id, session.tunnel_id,
                             session.ue_ip, self.data_network(session.dn_name).index))
        session.state = SessionState.Released
        self.pool.release(session.ue_ip)
        # Released records are kept out of the table to bound memory.
        del self.sessions[session_id]
        return session

    def release_all(self, supi: str) -> list[PduSession]:
        return [self.release_session(s.session_id)
                for s in list(self.sessions.values())
                if s.supi == supi and s.state is SessionState.Active]

    def dn_by_index(self, index: int) -> DataNetwork:
        for dn in self.data_networks:
            if dn.index == index:
                return dn
        raise UnknownDataNetwork(f"index {index}")

