import copy
import json

import pytest

from orbit5gc import MalformedTrace, load_scenario, run_scenario
from orbit5gc.verify import Violation, ground_user_events, verify_trace


@pytest.fixture(scope="module")
def runs():
    return {name: run_scenario(load_scenario(name, env={}))
            for name in ("sat200ms", "onboard", "blackout")}


def records(runs, name="sat200ms"):
    return copy.deepcopy(runs[name].records)


def first(recs, pred):
    return next(i for i, r in enumerate(recs) if pred(r))


def names(violations):
    return {v.invariant for v in violations}


class TestHealthy:
    @pytest.mark.parametrize("name", ["sat200ms", "onboard", "blackout"])
    def test_clean(self, runs, name):
        assert verify_trace(runs[name].trace) == []

    def test_accepts_path_text_and_records(self, runs, tmp_path):
        r = runs["sat200ms"]
        f = tmp_path / "trace.jsonl"
        f.write_text(r.trace)
        assert verify_trace(f) == verify_trace(str(f)) == verify_trace(r.records) == []

    def test_onboard_has_no_ground_user_events(self, runs):
        assert ground_user_events(runs["onboard"].trace) == []
        assert len(ground_user_events(runs["sat200ms"].trace)) == 20


class TestNegatives:
    def test_delivery_before_send(self, runs):
        recs = records(runs)
        i = first(recs, lambda r: r["kind"] == "LinkDeliver")
        j = first(recs, lambda r: r["kind"] == "LinkSend" and r["mid"] == recs[i]["mid"])
        moved = recs.pop(i)
        recs.insert(j, moved)
        v = verify_trace(recs)
        assert {"link_causality", "time_order"} <= names(v)
        causal = [x for x in v if x.invariant == "link_causality"]
        assert j in causal[0].events

    def test_delivery_faster_than_light(self, runs):
        recs = records(runs)
        i = first(recs, lambda r: r["kind"] == "LinkDeliver" and r["link"] == "feeder")
        recs[i]["t_us"] = recs[i]["depart_us"] + 100_000 - 1
        v = verify_trace(recs)
        assert any(x.invariant == "link_causality" and i in x.events for x in v)

    def test_counter_mismatch(self, runs):
        recs = records(runs)
        i = first(recs, lambda r: r["kind"] == "Counters" and r["final"])
        recs[i]["delivered_ground"] += 1
        v = verify_trace(recs)
        assert any(x.invariant == "conservation" and x.events == (i,) for x in v)

    def test_consistent_but_wrong_counters(self, runs):
        # the equation holds but packet events say otherwise
        recs = records(runs)
        i = first(recs, lambda r: r["kind"] == "Counters" and r["final"])
        recs[i]["in_uplink"] += 1
        recs[i]["dropped_link"] += 1
        v = verify_trace(recs)
        assert any(x.invariant == "conservation" and "disagrees" in x.detail for x in v)

    def test_lost_packet_event(self, runs):
        recs = records(runs)
        i = first(recs, lambda r: r["kind"] == "UserPktDeliver")
        del recs[i]
        assert "conservation" in names(verify_trace(recs))

    def test_counter_decrease(self, runs):
        recs = records(runs)
        idx = [i for i, r in enumerate(recs) if r["kind"] == "Counters"]
        for i in idx[-3:]:
            recs[i]["in_uplink"] = 0
            recs[i]["in_uplink_bytes"] = 0
        assert "counter_monotone" in names(verify_trace(recs))

    def test_out_of_window_departure(self, runs):
        recs = records(runs, "blackout")
        i = first(recs, lambda r: r["kind"] == "LinkSend" and r["link"] == "feeder")
        recs[i]["depart_us"] = recs[i]["t_us"]
        v = verify_trace(recs)
        assert any(x.invariant == "contact_window" and x.events == (i,) for x in v)

    def test_fifo_swap(self, runs):
        recs = records(runs)
        deliveries = [i for i, r in enumerate(recs)
                      if r["kind"] == "LinkDeliver" and r["plane"] == "user" and r["dir"] == "up"
                      and r["link"] == "feeder"]
        a, b = deliveries[:2]
        recs[a]["mid"], recs[b]["mid"] = recs[b]["mid"], recs[a]["mid"]
        assert "link_fifo" in names(verify_trace(recs))

    def test_rule_without_session(self, runs):
        recs = [r for r in records(runs) if r["kind"] != "SessionActive"]
        assert "smf_upf_agreement" in names(verify_trace(recs))

    def test_session_without_amf_registration(self, runs):
        recs = records(runs)
        i = first(recs, lambda r: r["kind"] == "AmfState" and r["state"] == "Registered")
        recs[i]["state"] = "Deregistered"
        assert "state_lag" in names(verify_trace(recs))

    def test_onboard_leak(self, runs):
        # pretend an onboard-originated downlink packet crossed the ground link
        recs = records(runs, "onboard")
        i = first(recs, lambda r: r["kind"] == "UserPktSend" and r.get("origin") == "onboard")
        pkt = recs[i]["pkt"]
        j = first(recs, lambda r: r["kind"] == "LinkSend" and r.get("pkt") == pkt)
        key = (recs[j]["link"], recs[j]["mid"])
        for r in recs:
            if r["kind"].startswith("Link") and (r["link"], r["mid"]) == key:
                r["link"] = "ground"
        v = verify_trace(recs)
        assert any(x.invariant == "onboard_isolation" and x.events == (i, j) for x in v)

    def test_violation_str_names_invariant(self):
        v = Violation("conservation", (3, 4), "x")
        assert str(v) == "conservation @ [3,4]: x"


class TestMalformed:
    def test_empty(self):
        with pytest.raises(MalformedTrace):
            verify_trace([])

    def test_bad_json(self):
        with pytest.raises(MalformedTrace, match="line 2"):
            verify_trace('{"ev":0}\nnot json\n')

    def test_missing_field(self, runs):
        recs = records(runs)
        del recs[3]["t_us"]
        with pytest.raises(MalformedTrace, match="record 3"):
            verify_trace(recs)

    def test_non_integer_time(self, runs):
        recs = records(runs)
        recs[2]["t_us"] = 1.5
        with pytest.raises(MalformedTrace):
            verify_trace(recs)

    def test_no_header(self, runs):
        with pytest.raises(MalformedTrace, match="TraceStart"):
            verify_trace(records(runs)[1:])

    def test_missing_file(self, tmp_path):
        with pytest.raises(MalformedTrace):
            verify_trace(tmp_path / "nope.jsonl")

    def test_non_object_line(self, runs):
        text = runs["sat200ms"].trace + json.dumps([1, 2]) + "\n"
        with pytest.raises(MalformedTrace):
            verify_trace(text)
