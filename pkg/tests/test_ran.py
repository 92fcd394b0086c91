import math

import pytest
from scipy.stats import binom

from orbit5gc.ran import NoActiveSession, SimGnb
from orbit5gc.satlink import LinkProfile, serialization_us
from orbit5gc.scenario import LinkConfig, load_scenario
from orbit5gc.testbed import Testbed, run_scenario
from orbit5gc.verify import ground_user_events, verify_trace

from conftest import ideal_link, make_config, supi

REGISTER = (0.0, 0, "register", {})
SESSION = (1.0, 0, "session", {"dn": "internet"})

# N2 envelope (11 bytes) + NAS sizes of the five registration messages
REG_UP = (11 + 20, 11 + 37, 11 + 2)     # Request, AuthResponse, Complete
REG_DOWN = (11 + 28, 11 + 2)            # AuthRequest, Accept


def proc(result, kind):
    [p] = [p for p in result.summary["procedures"] if p["kind"] == kind]
    return p


class TestGnb:
    def test_ran_ids_unique(self):
        g = SimGnb(1)
        ids = [g.attach(supi(i)) for i in range(5)]
        assert len(set(ids)) == 5
        assert g.attach(supi(2)) == ids[2]
        assert g.supi_for(ids[3]) == supi(3)


class TestRegistration:
    def test_latency_formula(self):
        d = 100_000
        r = run_scenario(make_config([REGISTER], delay_us=d))
        p = proc(r, "registration")
        prof = LinkProfile()
        ser = (sum(serialization_us(n, prof.uplink_bps) for n in REG_UP)
               + sum(serialization_us(n, prof.downlink_bps) for n in REG_DOWN))
        processing = 2 * 500 + 2 * 500  # AMF twice, UE twice
        assert p["outcome"] == "success"
        assert p["end_us"] - p["start_us"] == 5 * d + ser + processing
        for x in p["exchange_ms"]:
            assert x == pytest.approx(200.0 + 0.5, abs=1.0)

    def test_zero_delay_is_processing_only(self):
        r = run_scenario(make_config([REGISTER], feeder=ideal_link()))
        p = proc(r, "registration")
        assert p["latency_ms"] == pytest.approx(2.0)

    def test_blackout_times_out(self):
        r = run_scenario(load_scenario("blackout"))
        p = proc(r, "registration")
        assert p["outcome"] == "Timeout"
        assert p["end_us"] - p["start_us"] == 10_000_000

    def test_unknown_subscriber(self):
        cfg = make_config([REGISTER], feeder=ideal_link())
        tb = Testbed(cfg)
        tb.amf.subscribers.clear()
        tb.run()
        assert tb.ues[supi(0)].history[0].outcome == "AuthFailure"

    def test_wrong_key(self):
        cfg = make_config([REGISTER], feeder=ideal_link())
        tb = Testbed(cfg)
        tb.ues[supi(0)].key = b"wrong key"
        tb.run()
        assert tb.ues[supi(0)].history[0].outcome == "AuthFailure"
        assert verify_trace(tb.trace.text()) == []


class TestSessionSetup:
    def test_internet(self):
        d = 100_000
        r = run_scenario(make_config([REGISTER, SESSION], delay_us=d))
        p = proc(r, "session")
        prof = LinkProfile()
        ser = serialization_us(11 + 21, prof.uplink_bps) + serialization_us(11 + 24, prof.downlink_bps)
        assert p["outcome"] == "success" and p["ue_ip"] == "10.45.0.2"
        assert p["end_us"] - p["start_us"] == 2 * d + ser + 500 + 500  # AMF + SMF

    def test_before_registration(self):
        r = run_scenario(make_config([(0.0, 0, "session", {"dn": "internet"})]))
        assert proc(r, "session")["outcome"] == "NotRegistered"

    def test_unknown_dn_rejected(self):
        r = run_scenario(make_config([REGISTER, (1.0, 0, "session", {"dn": "nowhere"})]))
        assert proc(r, "session")["outcome"] == "Rejected:UNKNOWN_DNN"

    def test_queued_behind_registration(self):
        # Both start at t=0; the session waits for registration to finish.
        r = run_scenario(make_config([REGISTER, (0.0, 0, "session", {"dn": "internet"})]))
        reg, ses = proc(r, "registration"), proc(r, "session")
        # It starts as the UE sends RegistrationComplete, one crossing before
        # the AMF receives it.
        complete_up = serialization_us(11 + 2, LinkProfile().uplink_bps)
        assert ses["outcome"] == "success"
        assert ses["start_us"] == reg["end_us"] - 100_000 - complete_up

    def test_onboard_isolation(self):
        tl = [REGISTER, (1.0, 0, "session", {"dn": "onboard"}),
              (2.0, 0, "traffic", {"dst": "10.64.0.9", "count": 20, "size": 100})]
        r = run_scenario(make_config(tl))
        assert r.summary["counters"]["delivered_onboard"] == 20
        assert ground_user_events(r.trace) == []

    def test_release_and_reuse(self):
        tl = [REGISTER, SESSION, (2.0, 0, "release", {}), (3.0, 0, "session", {"dn": "internet"})]
        r = run_scenario(make_config(tl))
        ips = [p.get("ue_ip") for p in r.summary["procedures"] if p["kind"] == "session"]
        assert ips == ["10.45.0.2", "10.45.0.2"]
        assert proc(r, "release")["outcome"] == "success"


def traffic_run(loss, seed, count=100):
    tl = [REGISTER, SESSION, (2.0, 0, "traffic", {"dst": "8.8.8.8", "count": count, "size": 200,
                                                  "interval_us": 1000})]
    feeder = LinkConfig(LinkProfile(one_way_delay_us=10_000, loss_prob=loss))
    # Control messages must survive the lossy feeder: retransmit until answered.
    cfg = make_config(tl, feeder=feeder, seed=seed, retransmit_us=50_000, max_retries=20)
    return run_scenario(cfg)


class TestTraffic:
    def test_lossless_all_delivered(self):
        r = traffic_run(0.0, 1)
        [flow] = r.summary["flows"]
        assert (flow["sent"], flow["delivered"], flow["dropped"]) == (100, 100, 0)
        assert r.summary["counters"]["delivered_ground"] == 100

    def test_lossy_reproducible(self):
        a, b = traffic_run(0.5, 9), traffic_run(0.5, 9)
        assert a.summary["flows"] == b.summary["flows"]
        assert a.trace == b.trace

    def test_loss_bounds(self):
        # P(75 <= Binomial(100, 0.9) <= 97) from the closed-form distribution
        assert binom.cdf(97, 100, 0.9) - binom.cdf(74, 100, 0.9) > 0.99
        for seed in range(10):
            r = traffic_run(0.1, seed)
            if proc(r, "session")["outcome"] != "success":
                continue
            [flow] = r.summary["flows"]
            assert 75 <= flow["delivered"] <= 97
            assert flow["delivered"] + flow["dropped"] == flow["sent"] == 100

    def test_without_session(self):
        tb = Testbed(make_config([REGISTER]))
        tb.run()
        with pytest.raises(NoActiveSession):
            tb.ues[supi(0)].generate_traffic("8.8.8.8", 1, 100, 0)

    def test_oversize(self):
        tb = Testbed(make_config([REGISTER, SESSION]))
        tb.run()
        ue = tb.ues[supi(0)]
        with pytest.raises(ValueError):
            ue.generate_traffic("8.8.8.8", 1, 1500 - 16 + 1, 0)
        ue.generate_traffic("8.8.8.8", 1, 1500 - 16, 0)

    def test_downlink_to_ue(self):
        tl = [REGISTER, SESSION, (2.0, 0, "downlink", {"count": 5, "size": 300})]
        r = run_scenario(make_config(tl))
        assert r.summary["counters"]["delivered_ue"] == 5
        assert verify_trace(r.trace) == []

    def test_traffic_error_logged(self):
        r = run_scenario(make_config([(0.0, 0, "traffic", {"dst": "8.8.8.8"})]))
        assert r.summary["action_errors"][0]["error"] == "NoActiveSession"
