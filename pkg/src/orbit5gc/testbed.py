"""
Scenario runner: wires UEs, gNBs, the satellite links and the onboard
AMF/SMF/UPF onto one deterministic event loop.

Topology::

    UE -- gNB ==feeder== [satellite: AMF, SMF, UPF, onboard DN] ==ground== internet DN

The feeder link carries N2 signaling and N3 user traffic between the
terrestrial gNB and the satellite. The ground link connects the satellite
UPF to the terrestrial data network; traffic classified onboard never
uses it.
"""

from __future__ import annotations

import csv
import functools
import io
import ipaddress
import json
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nas
from .amf import Amf, AmfError, NgapEnvelope, NgapProcedure, Subscriber
from .nas import IeTag, MessageType
from .ran import NoActiveSession, Procedure, SimGnb, SimUe, TrafficFlow
from .satlink import Direction, SatLink
from .scenario import Action, ScenarioConfig
from .sim import Scheduler, Trace, trace_hash
from .smf import DataNetwork, IpPool, Smf, SmfError
from .upf import (TUNNEL_HEADER_LEN, ClassifierRule, DnTarget, N4Message, N4Op,
                  NoSession, PacketCounters, Upf, UserPacket)

METRICS_COLUMNS = (
    "t_s", "events_processed", "bytes_up", "bytes_down", "active_ues", "registered_ues",
    "active_sessions", "context_bytes_estimate",
) + tuple(f.name for f in fields(PacketCounters))


@dataclass
class MetricsRecord:
    t_s: float
    events_processed: int
    bytes_up: int
    bytes_down: int
    active_ues: int
    registered_ues: int
    active_sessions: int
    context_bytes_estimate: int
    counters: dict[str, int]

    def row(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "counters"}
        d.update(self.counters)
        return d


@dataclass
class RunResult:
    trace: str
    metrics: list[MetricsRecord]
    summary: dict
    records: list[dict] = field(repr=False, default_factory=list)

    @property
    def trace_hash(self) -> str:
        return self.summary["trace_hash"]

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for m in self.metrics:
            writer.writerow(m.row())
        return buf.getvalue()

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.jsonl").write_text(self.trace, encoding="utf-8")
        (out / "metrics.csv").write_text(self.metrics_csv(), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(self.summary, indent=2) + "\n",
                                          encoding="utf-8")
        return out


def _stats(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    return {"count": len(values), "mean": statistics.fmean(values),
            "min": min(values), "max": max(values)}


class Testbed:
    __test__ = False  # not a pytest test class
    def __init__(self, cfg: ScenarioConfig, real_time: bool = False):
        self.cfg = cfg
        self.sched = Scheduler(real_time=real_time)
        self.trace = Trace(self.sched)
        feeder_seed, ground_seed, amf_seed = np.random.SeedSequence(cfg.seed).spawn(3)

        self.links: dict[str, SatLink] = {}
        for name, seed in (("feeder", feeder_seed), ("ground", ground_seed)):
            lc = cfg.links[name]
            self.links[name] = SatLink(lc.profile, np.random.default_rng(seed), lc.windows,
                                       lc.policy, lc.queue_limit, name=name)

        dns = cfg.data_networks
        rules = [ClassifierRule(p, d.target) for d in dns for p in d.prefixes]
        self.upf = Upf(mtu=cfg.links["feeder"].profile.mtu, classifier=rules,
                       dn_targets={i: d.target for i, d in enumerate(dns)})
        self.smf = Smf(self.upf, IpPool(cfg.pool),
                       tuple(DataNetwork(d.name, d.target, i) for i, d in enumerate(dns)))
        subscribers = {u.supi: Subscriber(i, u.key) for i, u in enumerate(cfg.ues)}
        amf_rng = np.random.default_rng(amf_seed)
        self.amf = Amf(self.smf, subscribers, lambda n: amf_rng.bytes(n), cfg.auth_timeout_us)

        self.gnbs = {g: SimGnb(g) for g in cfg.gnbs}
        self.ues = {u.supi: SimUe(u.supi, u.key, self.gnbs[u.gnb], self) for u in cfg.ues}

        self.flows: list[TrafficFlow] = []
        self.procedures: list[Procedure] = []
        self.metrics: list[MetricsRecord] = []
        self.action_errors: list[dict] = []
        self._mid = 0
        self._pkt = 0
        self._inflight: dict[int, tuple[int, TrafficFlow]] = {}
        self._n4_seen = 0
        self._sessions_seen: dict[int, str] = {}
        self._started = False

    # -- properties the RAN endpoints rely on --------------------------------

    @property
    def now(self) -> int:
        return self.sched.now

    def after(self, dt: int, fn, *args) -> None:
        self.sched.after(dt, fn, *args)

    @property
    def ue_timeout_us(self) -> int:
        return self.cfg.ue_timeout_us

    @property
    def retransmit_us(self) -> int | None:
        return self.cfg.retransmit_us

    @property
    def max_retries(self) -> int:
        return self.cfg.max_retries

    @property
    def feeder_mtu(self) -> int:
        return self.cfg.links["feeder"].profile.mtu

    def _proc(self, nf: str) -> int:
        return self.cfg.processing_us[nf]

    def _later(self, dt: int, fn, *args, **kwargs) -> None:
        if kwargs:
            fn = functools.partial(fn, **kwargs)
        if dt:
            self.sched.after(dt, fn, *args)
        else:
            fn(*args)

    # -- link plumbing ------------------------------------------------------

    def _link_send(self, name: str, direction: Direction, size: int, plane: str,
                   src, dst, on_deliver, args=(), on_drop=None, **tags) -> None:
        link = self.links[name]
        self._mid += 1
        mid = self._mid
        msg_type = tags.pop("msg_type", None)
        tx = link.transmit(size, direction, self.now)
        self.trace.record("LinkSend", src=src, dst=dst, msg_type=msg_type,
                          size_bytes=size, link=name, dir=direction.value, mid=mid, plane=plane,
                          depart_us=tx.depart_at, queued=tx.queued, **tags)
        if tx.dropped:
            self.trace.record("LinkDrop", src=src, dst=dst, msg_type=msg_type, size_bytes=size,
                              link=name, dir=direction.value, mid=mid, plane=plane,
                              reason=tx.dropped)
            if on_drop is not None:
                on_drop()
            return
        self.sched.at(tx.deliver_at, self._link_deliver, name, direction, mid, tx, plane,
                      src, dst, msg_type, on_deliver, args)

    def _link_deliver(self, name, direction, mid, tx, plane, src, dst, msg_type, on_deliver, args):
        self.trace.record("LinkDeliver", src=src, dst=dst, msg_type=msg_type, size_bytes=tx.size,
                          link=name, dir=direction.value, mid=mid, plane=plane,
                          sent_us=tx.sent_at, depart_us=tx.depart_at)
        on_deliver(*args)

    # -- control plane ------------------------------------------------------

    def send_nas(self, ue: SimUe, msg: nas.NasMessage, retransmission: bool = False) -> None:
        wire = nas.encode(msg)
        mt = msg.message_type.name
        self.trace.record("NasSend", src=ue.supi, dst="amf", msg_type=mt, size_bytes=len(wire),
                          retx=retransmission)
        proc = (NgapProcedure.InitialUeMessage if msg.message_type is MessageType.RegistrationRequest
                else NgapProcedure.UplinkNasTransport)
        env = NgapEnvelope(proc, ue.gnb.gnb_id, ue.ran_id, wire)
        self._later(self._proc("gnb"), self._link_send, "feeder", Direction.Up, len(env), "control",
                    ue.supi, "amf", self._amf_arrival, (env,), None, msg_type=mt)

    def _supi_of(self, env: NgapEnvelope) -> str | None:
        gnb = self.gnbs.get(env.gnb_id)
        return gnb.supi_for(env.ue_ran_id) if gnb else None

    def _amf_arrival(self, env: NgapEnvelope) -> None:
        msg = env.nas
        supi = self._supi_of(env)
        self.trace.record("NasRecv", src=supi, dst="amf", msg_type=msg.message_type.name,
                          size_bytes=len(env.nas_payload))
        if msg.message_type is MessageType.RegistrationComplete and supi in self.ues:
            self.ues[supi].registration_completed(self.now)
            self.trace.record("RegistrationConfirmed", src=supi, dst="amf")
        self._later(self._proc("amf"), self._amf_handle, env)

    def _amf_handle(self, env: NgapEnvelope) -> None:
        try:
            outs = self.amf.handle_uplink(env, self.now)
        except AmfError as exc:
            self.trace.record("NasDiscard", src=self._supi_of(env), dst="amf",
                              msg_type=env.nas.message_type.name, reason=type(exc).__name__)
            outs = []
        self._drain_core()
        for out in outs:
            if out.message.message_type is MessageType.AuthenticationRequest:
                supi = self._supi_of(env)
                self.sched.after(self.cfg.auth_timeout_us, self._auth_expiry, supi,
                                 out.message[IeTag.NONCE])
            self._later(self._proc("smf") if out.via_smf else 0, self._amf_send, out)

    def _auth_expiry(self, supi: str, nonce: bytes) -> None:
        if self.amf.expire_auth(supi, nonce, self.now):
            self.trace.record("AuthExpired", src="amf", dst=supi)
        self._drain_core()

    def _amf_send(self, out) -> None:
        env = out.envelope
        supi = self._supi_of(env)
        mt = out.message.message_type
        tunnel = None
        if mt is MessageType.PduSessionEstablishmentAccept:
            session = self.smf.sessions.get(out.message.int_ie(IeTag.SESSION_REF))
            tunnel = session.tunnel_id if session else None
        self.trace.record("NasSend", src="amf", dst=supi, msg_type=mt.name,
                          size_bytes=len(env.nas_payload), retx=False)
        self._link_send("feeder", Direction.Down, len(env), "control", "amf", supi,
                        self._gnb_downlink, (env, tunnel), msg_type=mt.name)

    def _gnb_downlink(self, env: NgapEnvelope, tunnel) -> None:
        self._later(self._proc("gnb"), self._ue_arrival, env, tunnel)

    def _ue_arrival(self, env: NgapEnvelope, tunnel) -> None:
        supi = self._supi_of(env)
        msg = env.nas
        self.trace.record("NasRecv", src="amf", dst=supi, msg_type=msg.message_type.name,
                          size_bytes=len(env.nas_payload))
        ue = self.ues.get(supi)
        if ue is not None:
            self._later(self._proc("ue"), ue.receive, msg, tunnel, self.now)

    def _drain_core(self) -> None:
        for supi, state in self.amf.state_log:
            self.trace.record("AmfState", src="amf", dst=supi, state=state.value)
        self.amf.state_log.clear()
        for wire in self.smf.n4_log[self._n4_seen:]:
            m = N4Message.decode(wire)
            kind = "RuleInstall" if m.op is N4Op.Install else "RuleRemove"
            self.trace.record(kind, src="smf", dst="upf", size_bytes=len(wire),
                              session_id=m.session_id, tunnel_id=m.tunnel_id, ue_ip=str(m.ue_ip))
        self._n4_seen = len(self.smf.n4_log)
        active = {s.session_id: s for s in self.smf.active_sessions()}
        for sid, s in active.items():
            if sid not in self._sessions_seen:
                self._sessions_seen[sid] = s.supi
                self.trace.record("SessionActive", src="smf", dst=s.supi, session_id=sid,
                                  dn=s.dn_name, ue_ip=str(s.ue_ip), qos_class=s.qos_class)
        for sid in [k for k in self._sessions_seen if k not in active]:
            supi = self._sessions_seen.pop(sid)
            self.trace.record("SessionReleased", src="smf", dst=supi, session_id=sid)

    # -- callbacks from the UEs --------------------------------------------

    def ue_state_changed(self, ue: SimUe) -> None:
        self.trace.record("UeState", src=ue.supi, dst=None, state=ue.state.value)

    def procedure_finished(self, proc: Procedure) -> None:
        self.trace.record("ProcedureDone", src=proc.supi, dst=None, procedure=proc.kind,
                          outcome=proc.outcome, start_us=proc.start_us, end_us=proc.end_us)

    def new_flow(self, supi, dst, count, size, interval_us, uplink=True) -> TrafficFlow:
        flow = TrafficFlow(len(self.flows) + 1, supi, dst, count, size, interval_us, uplink)
        self.flows.append(flow)
        return flow

    # -- user plane ---------------------------------------------------------

    def _admit(self, flow: TrafficFlow, size: int, uplink: bool) -> int:
        self._pkt += 1
        self.upf.counters.admit(uplink, size)
        self._inflight[self._pkt] = (size, flow)
        flow.sent += 1
        return self._pkt

    def _settle(self, pkt_id: int, outcome: str, where: str | None = None, reason: str | None = None,
                counted: bool = False) -> None:
        size, flow = self._inflight.pop(pkt_id)
        if not counted:
            self.upf.counters.settle(outcome, size)
        if outcome.startswith("delivered"):
            flow.delivered += 1
            self.trace.record("UserPktDeliver", src=None, dst=where, size_bytes=size, pkt=pkt_id,
                              outcome=outcome)
        else:
            flow.dropped += 1
            self.trace.record("UserPktDrop", src=None, dst=where, size_bytes=size, pkt=pkt_id,
                              outcome=outcome, reason=reason)

    def send_uplink_packet(self, ue: SimUe, session, dst: ipaddress.IPv4Address, size: int,
                           flow: TrafficFlow) -> None:
        if ue.sessions.get(session.pdu_session_id) is not session:
            return  # session gone; the application has nothing to send on
        pkt = UserPacket(0, session.ue_ip, dst, size, self.now, session.tunnel_id)
        pkt.pkt_id = pid = self._admit(flow, size, uplink=True)
        self.trace.record("UserPktSend", src=ue.supi, dst=str(dst), size_bytes=size, pkt=pid,
                          direction="uplink", tunnel_id=session.tunnel_id)
        self._link_send("feeder", Direction.Up, size + TUNNEL_HEADER_LEN, "user", ue.supi, "upf",
                        self._upf_uplink_arrival, (pkt,),
                        lambda: self._settle(pid, "dropped_link", "feeder", "link"), pkt=pid)

    def _upf_uplink_arrival(self, pkt: UserPacket) -> None:
        self._later(self._proc("upf"), self._upf_uplink, pkt)

    def _upf_uplink(self, pkt: UserPacket) -> None:
        try:
            target = self.upf.classify_uplink(pkt)
        except NoSession:
            self._settle(pkt.pkt_id, "dropped_no_rule", "upf", "no_rule", counted=True)
            return
        self.trace.record("UpClassify", src="upf", dst=target.value, size_bytes=pkt.payload_len,
                          pkt=pkt.pkt_id, dst_ip=str(pkt.dst_ip))
        if target is DnTarget.Onboard:
            self._settle(pkt.pkt_id, "delivered_onboard", "onboard")
            return
        pid = pkt.pkt_id
        self._link_send("ground", Direction.Down, pkt.payload_len, "user", "upf", "ground",
                        self._settle, (pid, "delivered_ground", "ground"),
                        lambda: self._settle(pid, "dropped_link", "ground", "link"), pkt=pid)

    def send_downlink_packet(self, dn_name: str, target: DnTarget, dst_ip, size: int,
                             flow: TrafficFlow) -> None:
        pkt = UserPacket(0, ipaddress.IPv4Address("0.0.0.0"), ipaddress.IPv4Address(dst_ip),
                         size, self.now)
        pkt.pkt_id = pid = self._admit(flow, size, uplink=False)
        self.trace.record("UserPktSend", src=dn_name, dst=str(dst_ip), size_bytes=size, pkt=pid,
                          direction="downlink", origin=target.value)
        if target is DnTarget.Onboard:
            self._upf_downlink_arrival(pkt)
        else:
            self._link_send("ground", Direction.Up, size, "user", "ground", "upf",
                            self._upf_downlink_arrival, (pkt,),
                            lambda: self._settle(pid, "dropped_link", "ground", "link"), pkt=pid)

    def _upf_downlink_arrival(self, pkt: UserPacket) -> None:
        self._later(self._proc("upf"), self._upf_downlink, pkt)

    def _upf_downlink(self, pkt: UserPacket) -> None:
        try:
            tunnel, wire = self.upf.forward_downlink(pkt)
        except NoSession:
            self._settle(pkt.pkt_id, "dropped_no_rule", "upf", "no_rule", counted=True)
            return
        pid = pkt.pkt_id
        self._link_send("feeder", Direction.Down, wire, "user", "upf", str(pkt.dst_ip),
                        self._settle, (pid, "delivered_ue", "ue"),
                        lambda: self._settle(pid, "dropped_link", "feeder", "link"),
                        pkt=pid, tunnel_id=tunnel)

    def generate_downlink(self, ue: SimUe, dn_name: str | None, count: int, size: int,
                          interval_us: int) -> TrafficFlow:
        session = ue.session_for(dn_name)
        if session is None:
            raise NoActiveSession(f"{ue.supi} has no active session")
        if size + TUNNEL_HEADER_LEN > self.upf.mtu:
            raise ValueError(f"payload {size} exceeds MTU {self.upf.mtu} minus tunnel header")
        source = self.smf.data_network(dn_name or session.dn_name)
        flow = self.new_flow(str(source.name), str(session.ue_ip), count, size, interval_us,
                             uplink=False)
        for k in range(count):
            self.sched.after(k * interval_us, self.send_downlink_packet, source.name,
                             source.target, session.ue_ip, size, flow)
        return flow

    # -- timeline -----------------------------------------------------------

    def _start_action(self, action: Action) -> None:
        ue = self.ues[action.supi]
        p = action.params
        kind = action.action
        if kind == "register":
            self.procedures.append(ue.run_registration())
        elif kind == "session":
            self.procedures.append(ue.run_session_setup(p.get("dn", "internet"), p.get("qos", 9),
                                                        p.get("pdu_session_id")))
        elif kind == "release":
            self.procedures.append(ue.run_session_release(p.get("dn")))
        elif kind == "deregister":
            self.procedures.append(ue.run_deregistration())
        else:
            try:
                if kind == "traffic":
                    ue.generate_traffic(p["dst"], p.get("count", 1), p.get("size", 1000),
                                        p.get("interval_us", 0), p.get("dn"))
                else:
                    self.generate_downlink(ue, p.get("dn"), p.get("count", 1),
                                           p.get("size", 1000), p.get("interval_us", 0))
            except (NoActiveSession, SmfError, ValueError) as exc:
                err = {"t_us": self.now, "ue": ue.supi, "action": kind,
                       "error": type(exc).__name__}
                self.action_errors.append(err)
                self.trace.record("ActionError", src=ue.supi, dst=None, action=kind,
                                  error=type(exc).__name__)

    # -- metrics ------------------------------------------------------------

    def _tick(self) -> None:
        active, registered, size = self.amf.context_table_stats()
        up = sum(link.bytes_sent[Direction.Up] for link in self.links.values())
        down = sum(link.bytes_sent[Direction.Down] for link in self.links.values())
        snap = self.upf.counters.snapshot()
        rec = MetricsRecord(self.now / 1e6, self.sched.processed, up, down, active, registered,
                            len(self.smf.active_sessions()), size, snap)
        self.metrics.append(rec)
        self.trace.record("Counters", src="upf", dst=None, final=False, **snap)

    # -- driver -------------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        cfg = self.cfg
        links = {}
        for name, lc in cfg.links.items():
            links[name] = {
                "one_way_delay_us": lc.profile.one_way_delay_us,
                "reorder_allowed": lc.profile.reorder_allowed,
                "windows": [[w.open_at, w.close_at] for w in lc.windows],
                "policy": lc.policy,
            }
        self.trace.record("TraceStart", src=None, dst=None, scenario=cfg.name, seed=cfg.seed,
                          duration_us=cfg.duration_us, cadence_us=cfg.cadence_us, links=links)
        for k in range(1, cfg.ticks + 1):
            self.sched.at(min(k * cfg.cadence_us, cfg.duration_us), self._tick)
        for action in cfg.timeline:
            self.sched.at(action.at_us, self._start_action, action)

    def run(self) -> RunResult:
        self.start()
        self.sched.run(until=self.cfg.duration_us)
        return self.finish()

    def finish(self) -> RunResult:
        cfg = self.cfg
        self.sched.now = max(self.sched.now, cfg.duration_us)
        for pid in sorted(self._inflight):
            self._settle(pid, "dropped_link", None, "horizon")
        self.trace.record("Counters", src="upf", dst=None, final=True,
                          **self.upf.counters.snapshot())
        text = self.trace.text()
        return RunResult(text, list(self.metrics), self._summary(text), self.trace.records)

    def _summary(self, text: str) -> dict:
        procs = [p for ue in self.ues.values() for p in ue.history]
        procs.sort(key=lambda p: (p.start_us, p.supi))
        regs = [p for p in procs if p.kind == "registration" and p.ok]
        sessions = [p for p in procs if p.kind == "session" and p.ok]
        outcomes: dict[str, int] = {}
        for p in procs:
            key = f"{p.kind}:{p.outcome or 'incomplete'}"
            outcomes[key] = outcomes.get(key, 0) + 1
        active, registered, size = self.amf.context_table_stats()
        return {
            "scenario": self.cfg.name,
            "seed": self.cfg.seed,
            "duration_s": self.cfg.duration_us / 1e6,
            "trace_hash": trace_hash(text),
            "trace_records": len(self.trace.records),
            "events_processed": self.sched.processed,
            "metrics_records": len(self.metrics),
            "latency_ms": {
                "registration": _stats([p.latency_ms for p in regs]),
                "registration_exchange": _stats([x for p in regs for x in p.exchange_ms]),
                "session": _stats([p.latency_ms for p in sessions]),
            },
            "outcomes": outcomes,
            "procedures": [p.summary() for p in procs],
            "flows": [f.summary() for f in self.flows],
            "action_errors": self.action_errors,
            "counters": self.upf.counters.snapshot(),
            "context": {"active_ues": active, "registered_ues": registered,
                        "bytes_estimate": size},
        }


def run_scenario(cfg: ScenarioConfig, real_time: bool = False) -> RunResult:
    return Testbed(cfg, real_time=real_time).run()
