"""
Offline invariant checks over a JSON Lines trace.

Event indices in violations are 0-based record positions in the trace.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .sim import TRACE_BASE_FIELDS, MalformedTrace, parse_trace
from .upf import PacketCounters, conservation_holds

COUNTER_FIELDS = tuple(PacketCounters().snapshot())
MONOTONE_COUNTERS = tuple(f for f in COUNTER_FIELDS if not f.startswith("in_flight"))


@dataclass(frozen=True)
class Violation:
    invariant: str
    events: tuple[int, ...]
    detail: str = field(default="", compare=False)

    def __str__(self) -> str:
        where = ",".join(map(str, self.events[:8])) + ("…" if len(self.events) > 8 else "")
        return f"{self.invariant} @ [{where}]: {self.detail}"


def _load(trace) -> list[dict]:
    if isinstance(trace, str) and (not trace or trace.lstrip().startswith("{")):
        return parse_trace(trace.splitlines())
    if isinstance(trace, (str, Path)):
        try:
            text = Path(trace).read_text(encoding="utf-8")
        except OSError as exc:
            raise MalformedTrace(f"cannot read {trace}: {exc.strerror}") from None
        return parse_trace(text.splitlines())
    return list(trace)


def _check_shape(records: list[dict]) -> None:
    if not records:
        raise MalformedTrace("trace is empty")
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise MalformedTrace(f"record {i} is not an object")
        missing = [f for f in TRACE_BASE_FIELDS if f not in rec]
        if missing:
            raise MalformedTrace(f"record {i} lacks {', '.join(missing)}")
        if not isinstance(rec["t_us"], int) or not isinstance(rec["ev"], int):
            raise MalformedTrace(f"record {i}: t_us and ev must be integers")
    if records[0]["kind"] != "TraceStart" or "links" not in records[0]:
        raise MalformedTrace("first record must be TraceStart with link settings")


class _Checker:
    def __init__(self, records):
        self.records = records
        self.out: list[Violation] = []
        self.links = records[0]["links"]

    def bad(self, invariant: str, events, detail: str) -> None:
        self.out.append(Violation(invariant, tuple(events), detail))

    def ordering(self):
        prev_t = prev_ev = None
        for i, rec in enumerate(self.records):
            if prev_t is not None and (rec["t_us"] < prev_t or rec["ev"] < prev_ev):
                self.bad("time_order", (i - 1, i),
                         f"t_us {prev_t}->{rec['t_us']}, ev {prev_ev}->{rec['ev']}")
            prev_t, prev_ev = rec["t_us"], rec["ev"]

    def links_(self):
        sends: dict[tuple, int] = {}
        settled: dict[tuple, int] = {}
        order: dict[tuple, list[int]] = defaultdict(list)  # (link, dir) -> delivered send indices
        for i, rec in enumerate(self.records):
            kind = rec["kind"]
            if kind not in ("LinkSend", "LinkDeliver", "LinkDrop"):
                continue
            key = (rec.get("link"), rec.get("mid"))
            settings = self.links.get(rec.get("link"))
            if settings is None:
                self.bad("link_causality", (i,), f"unknown link {rec.get('link')!r}")
                continue
            if kind == "LinkSend":
                if key in sends:
                    self.bad("link_causality", (sends[key], i), f"message id {key} sent twice")
                sends[key] = i
                depart = rec.get("depart_us")
                if depart is not None and depart < rec["t_us"]:
                    self.bad("link_causality", (i,), "departs before it was sent")
                windows = settings.get("windows") or []
                if depart is not None and windows and not any(a <= depart < b for a, b in windows):
                    self.bad("contact_window", (i,),
                             f"{rec['link']} departure at {depart} outside every window")
                continue
            j = sends.get(key)
            if j is None:
                self.bad("link_causality", (i,), f"{kind} of {key} without a prior LinkSend")
                continue
            if key in settled:
                self.bad("link_causality", (settled[key], i), f"{key} settled twice")
                continue
            settled[key] = i
            if kind == "LinkDeliver":
                send = self.records[j]
                floor = (send.get("depart_us") or send["t_us"]) + settings["one_way_delay_us"]
                if rec["t_us"] < floor:
                    self.bad("link_causality", (j, i),
                             f"delivered at {rec['t_us']} before depart+delay {floor}")
                if not settings.get("reorder_allowed", False):
                    order[(rec["link"], rec.get("dir"))].append(j)
        for (link, direction), idx in order.items():
            for a, b in zip(idx, idx[1:]):
                if b < a:
                    self.bad("link_fifo", (a, b),
                             f"{link}/{direction} delivered out of send order")

    def counters(self):
        derived = dict.fromkeys(COUNTER_FIELDS, 0)
        last = None
        final_seen = False
        pkt_size: dict[int, int] = {}
        for i, rec in enumerate(self.records):
            kind = rec["kind"]
            if kind == "UserPktSend":
                size = rec["size_bytes"]
                pkt_size[rec.get("pkt")] = size
                d = "in_uplink" if rec.get("direction") == "uplink" else "in_downlink"
                derived[d] += 1
                derived[d + "_bytes"] += size
                derived["in_flight"] += 1
                derived["in_flight_bytes"] += size
            elif kind in ("UserPktDeliver", "UserPktDrop"):
                outcome = rec.get("outcome")
                if outcome not in PacketCounters.OUTCOMES or rec.get("pkt") not in pkt_size:
                    self.bad("conservation", (i,), f"{kind} with unknown packet or outcome")
                    continue
                size = pkt_size.pop(rec["pkt"])
                derived[outcome] += 1
                derived[outcome + "_bytes"] += size
                derived["in_flight"] -= 1
                derived["in_flight_bytes"] -= size
            elif kind == "Counters":
                snap = {f: rec.get(f) for f in COUNTER_FIELDS}
                if None in snap.values():
                    raise MalformedTrace(f"record {i}: Counters lacks fields")
                if not conservation_holds(snap):
                    self.bad("conservation", (i,), "inputs != outputs + in flight")
                diff = [f for f in COUNTER_FIELDS if snap[f] != derived[f]]
                if diff:
                    self.bad("conservation", (i,),
                             "snapshot disagrees with packet events on " + ", ".join(diff))
                if last is not None:
                    down = [f for f in MONOTONE_COUNTERS if snap[f] < self.records[last][f]]
                    if down:
                        self.bad("counter_monotone", (last, i), "decreased: " + ", ".join(down))
                if rec.get("final"):
                    final_seen = True
                    if snap["in_flight"] or snap["in_flight_bytes"]:
                        self.bad("conservation", (i,), "packets still in flight at the end")
                last = i
        if pkt_size and final_seen:
            self.bad("conservation", (len(self.records) - 1,),
                     f"{len(pkt_size)} packets never settled")

    def agreement(self):
        sessions: dict[int, tuple[str, int]] = {}  # session id -> (supi, index)
        rules: dict[int, int] = {}
        amf: dict[str, str] = {}
        ue: dict[str, tuple[str, int]] = {}
        records = self.records

        def boundary(end: int) -> None:
            if set(sessions) != set(rules):
                extra_s = sorted(set(sessions) - set(rules))
                extra_r = sorted(set(rules) - set(sessions))
                idx = [sessions[s][1] for s in extra_s] + [rules[r] for r in extra_r]
                self.bad("smf_upf_agreement", sorted(idx) or (end,),
                         f"sessions without rules {extra_s}, rules without sessions {extra_r}")
            for sid, (supi, i) in sessions.items():
                if amf.get(supi) != "Registered":
                    self.bad("state_lag", (i, end),
                             f"session {sid} active while AMF has {supi} {amf.get(supi)}")
            for supi, (state, i) in ue.items():
                if state == "Registered" and amf.get(supi) != "Registered":
                    self.bad("state_lag", (i, end),
                             f"UE {supi} Registered ahead of AMF ({amf.get(supi)})")

        for i, rec in enumerate(records):
            if i and rec["ev"] != records[i - 1]["ev"]:
                boundary(i - 1)
            kind = rec["kind"]
            if kind == "SessionActive":
                sessions[rec["session_id"]] = (rec["dst"], i)
            elif kind == "SessionReleased":
                if sessions.pop(rec["session_id"], None) is None:
                    self.bad("smf_upf_agreement", (i,), "release of unknown session")
            elif kind == "RuleInstall":
                if rec["session_id"] in rules:
                    self.bad("smf_upf_agreement", (rules[rec["session_id"]], i), "rule installed twice")
                rules[rec["session_id"]] = i
            elif kind == "RuleRemove":
                if rules.pop(rec["session_id"], None) is None:
                    self.bad("smf_upf_agreement", (i,), "removal of unknown rule")
            elif kind == "AmfState":
                amf[rec["dst"]] = rec["state"]
            elif kind == "UeState":
                ue[rec["src"]] = (rec["state"], i)
        boundary(len(records) - 1)

    def isolation(self):
        onboard: dict[int, int] = {}
        for i, rec in enumerate(self.records):
            kind = rec["kind"]
            if kind == "UpClassify" and rec.get("dst") == "onboard":
                onboard[rec["pkt"]] = i
            elif kind == "UserPktSend" and rec.get("origin") == "onboard":
                onboard[rec["pkt"]] = i
            elif (kind in ("LinkSend", "LinkDeliver", "LinkDrop") and rec.get("link") == "ground"
                  and rec.get("pkt") in onboard):
                self.bad("onboard_isolation", (onboard[rec["pkt"]], i),
                         f"onboard packet {rec['pkt']} on the ground link")


def verify_trace(trace) -> list[Violation]:
    """Check a trace (path, JSONL text, or list of records); empty list means healthy."""
    records = _load(trace)
    _check_shape(records)
    c = _Checker(records)
    c.ordering()
    c.links_()
    c.counters()
    c.agreement()
    c.isolation()
    return c.out


def ground_user_events(trace) -> list[int]:
    """Indices of user-plane link events on the satellite-to-ground link."""
    return [i for i, rec in enumerate(_load(trace))
            if rec.get("link") == "ground" and rec.get("plane") == "user"]
