import csv
import io
import json
import math
import time

import pytest

from orbit5gc import ConfigError, load_scenario, parse_scenario, run_scenario
from orbit5gc.scenario import SEED_ENV, shipped_scenarios
from orbit5gc.sim import Scheduler, parse_trace, trace_hash
from orbit5gc.testbed import METRICS_COLUMNS
from orbit5gc.verify import verify_trace

from conftest import make_config

MINIMAL = {
    "duration_s": 1.0,
    "ues": [{"supi": "001010000000001", "key": "00112233"}],
}


def problems(doc):
    with pytest.raises(ConfigError) as info:
        parse_scenario(doc)
    return dict(info.value.problems)


class TestConfigErrors:
    def test_minimal_parses(self):
        cfg = parse_scenario(MINIMAL)
        assert cfg.duration_us == 1_000_000 and cfg.cadence_us == 1_000_000
        assert set(cfg.links) == {"feeder", "ground"}

    def test_missing_duration(self):
        assert problems({"ues": MINIMAL["ues"]}) == {"duration_s": "missing"}

    def test_field_level_diagnostics_collected(self):
        doc = dict(MINIMAL, seed=-1, links={"feeder": {"loss_prob": 1.5}, "moon": {}},
                   timeline=[{"at_s": 5.0, "ue": "001010000000001", "action": "register"},
                             {"at_s": 0.0, "ue": "nobody", "action": "register"},
                             {"at_s": 0.0, "ue": "001010000000001", "action": "fly"}])
        p = problems(doc)
        assert "seed" in p
        assert "links.moon" in p
        assert any(k.startswith("links.feeder") for k in p)
        assert "outside" in p["timeline[0]"]
        assert "timeline[1].ue" in p
        assert "timeline[2].action" in p

    def test_wrong_types(self):
        p = problems(dict(MINIMAL, duration_s="long"))
        assert p["duration_s"].startswith("expected float")

    def test_bad_supi_and_key(self):
        p = problems({"duration_s": 1.0, "ues": [{"supi": "12", "key": "zz"},
                                                 {"supi": "001010000000001", "key": "zz"}]})
        assert "ues[0].supi" in p and "ues[1].key" in p

    def test_duplicate_prefix_rejected(self):
        dns = [{"name": "a", "prefixes": ["10.0.0.0/8"]},
               {"name": "b", "target": "onboard", "prefixes": ["10.0.0.0/8"]}]
        assert "data_networks[1].prefixes" in problems(dict(MINIMAL, data_networks=dns))

    def test_unknown_top_level_field(self):
        assert problems(dict(MINIMAL, colour="red")) == {"colour": "unknown field"}

    def test_traffic_needs_destination(self):
        tl = [{"at_s": 0.0, "ue": "001010000000001", "action": "traffic"}]
        assert "timeline[0].dst" in problems(dict(MINIMAL, timeline=tl))

    def test_unknown_scenario_name(self):
        with pytest.raises(ConfigError):
            load_scenario("no-such-scenario", env={})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scenario(tmp_path / "absent.toml", env={})

    def test_toml_syntax(self, tmp_path):
        f = tmp_path / "bad.toml"
        f.write_text("duration_s = = 1\n")
        with pytest.raises(ConfigError) as info:
            load_scenario(f, env={})
        assert info.value.problems[0][0] == "scenario"

    def test_group_expands_with_stagger(self):
        doc = {"duration_s": 1.0,
               "ues": [{"supi": "001010000000010", "key": "00", "count": 3, "group": "g"}],
               "timeline": [{"at_s": 0.0, "ue": "g", "action": "register", "stagger_us": 10}]}
        cfg = parse_scenario(doc)
        assert [u.supi for u in cfg.ues] == [f"0010100000000{n}" for n in (10, 11, 12)]
        assert [a.at_us for a in cfg.timeline] == [0, 10, 20]


class TestSeed:
    def test_file_seed(self):
        assert load_scenario("sat200ms", env={}).seed == 1

    def test_env_overrides_file(self):
        assert load_scenario("sat200ms", env={SEED_ENV: "99"}).seed == 99

    def test_explicit_overrides_env(self):
        assert load_scenario("sat200ms", seed=5, env={SEED_ENV: "99"}).seed == 5

    def test_env_from_process(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "0x10")
        assert load_scenario("sat200ms").seed == 16

    @pytest.mark.parametrize("value", ["abc", "-1", str(2**64)])
    def test_bad_seed(self, value):
        with pytest.raises(ConfigError):
            load_scenario("sat200ms", env={SEED_ENV: value})


class TestScheduler:
    def test_equal_times_fifo(self):
        s, out = Scheduler(), []
        for k in range(5):
            s.at(10, out.append, k)
        s.at(5, out.append, "early")
        s.run()
        assert out == ["early", 0, 1, 2, 3, 4] and s.processed == 6

    def test_no_past_scheduling(self):
        s = Scheduler()
        s.at(10, lambda: None)
        s.run()
        with pytest.raises(ValueError):
            s.at(5, lambda: None)

    def test_until_is_inclusive(self):
        s, out = Scheduler(), []
        s.at(10, out.append, 1)
        s.at(11, out.append, 2)
        s.run(until=10)
        assert out == [1] and len(s) == 1


class TestRun:
    def test_tiebreak_fixed_order(self):
        recs = run_scenario(load_scenario("tiebreak", env={})).records
        sends = [r["src"] for r in recs if r["kind"] == "NasSend" and r["t_us"] == 0]
        assert sends == ["001010000000001", "001010000000002"]
        challenges = [r["dst"] for r in recs
                      if r["kind"] == "NasSend" and r["msg_type"] == "AuthenticationRequest"]
        assert challenges == ["001010000000001", "001010000000002"]
        done = [r["src"] for r in recs if r["kind"] == "ProcedureDone"]
        assert done == ["001010000000001", "001010000000002"]

    @pytest.mark.parametrize("duration_s,cadence_s", [(10, 1), (2.5, 1), (1, 0.3), (0.5, 2)])
    def test_metrics_completeness(self, duration_s, cadence_s):
        doc = dict(MINIMAL, duration_s=duration_s, metrics_cadence_s=cadence_s)
        r = run_scenario(parse_scenario(doc))
        assert len(r.metrics) == math.ceil(duration_s / cadence_s)
        assert r.metrics[-1].t_s == pytest.approx(duration_s)

    def test_empty_timeline(self):
        r = run_scenario(load_scenario("idle", env={}))
        kinds = {rec["kind"] for rec in r.records}
        assert kinds == {"TraceStart", "Counters"}
        assert r.summary["events_processed"] == len(r.metrics) == 10
        assert r.summary["procedures"] == []

    def test_same_seed_same_bytes(self):
        cfg = load_scenario("onboard", env={})
        assert run_scenario(cfg).trace == run_scenario(cfg).trace

    def test_seed_changes_hash(self):
        a = run_scenario(load_scenario("onboard", seed=2, env={}))
        b = run_scenario(load_scenario("onboard", seed=3, env={}))
        assert a.trace_hash != b.trace_hash

    def test_trace_hash_is_64_bit(self):
        r = run_scenario(load_scenario("sat200ms", env={}))
        assert len(r.trace_hash) == 16 and r.trace_hash == trace_hash(r.trace)

    def test_trace_nondecreasing_time(self):
        recs = run_scenario(load_scenario("sat200ms", env={})).records
        ts = [r["t_us"] for r in recs]
        assert ts == sorted(ts)

    def test_outputs_written(self, tmp_path):
        r = run_scenario(load_scenario("sat200ms", env={}))
        out = r.write(tmp_path / "run")
        assert (out / "trace.jsonl").read_text() == r.trace
        parse_trace((out / "trace.jsonl").read_text().splitlines())
        rows = list(csv.DictReader(io.StringIO((out / "metrics.csv").read_text())))
        assert len(rows) == 5
        assert tuple(rows[0]) == METRICS_COLUMNS
        summary = json.loads((out / "summary.json").read_text())
        assert summary["trace_hash"] == r.trace_hash

    def test_sat200ms_summary(self):
        s = run_scenario(load_scenario("sat200ms", env={})).summary
        assert s["latency_ms"]["registration"]["mean"] == pytest.approx(502.779, abs=1e-3)
        ex = s["latency_ms"]["registration_exchange"]
        assert ex["count"] == 2 and 200 < ex["min"] <= ex["max"] < 201
        assert s["outcomes"] == {"registration:success": 1, "session:success": 1}
        assert [f["delivered"] for f in s["flows"]] == [10]
        c = s["counters"]
        assert c["in_uplink"] == c["delivered_ground"] == 10 and c["in_flight"] == 0

    def test_metrics_counters_monotone(self):
        r = run_scenario(load_scenario("stress", env={}))
        for a, b in zip(r.metrics, r.metrics[1:]):
            assert b.events_processed >= a.events_processed
            assert b.bytes_up >= a.bytes_up and b.bytes_down >= a.bytes_down

    @pytest.mark.parametrize("name", shipped_scenarios())
    def test_shipped_scenarios_verify(self, name):
        assert verify_trace(run_scenario(load_scenario(name, env={})).trace) == []

    def test_action_error_recorded(self, config):
        # traffic without a session is reported, not fatal
        cfg = config([(0, 0, "register", {}), (1, 0, "traffic", {"dst": "8.8.8.8"})])
        r = run_scenario(cfg)
        assert len(r.summary["action_errors"]) == 1
        assert any(rec["kind"] == "ActionError" for rec in r.records)

    def test_real_time_pacing(self):
        cfg = make_config(duration_s=0.3)
        cfg.cadence_us = 100_000
        t0 = time.monotonic()
        paced = run_scenario(cfg, real_time=True)
        elapsed = time.monotonic() - t0
        assert 0.25 <= elapsed < 2.0
        assert paced.trace == run_scenario(cfg).trace
