import math

import pytest

from orbit5gc.satlink import LinkProfile
from orbit5gc.scenario import Action, LinkConfig, ScenarioConfig, UeConfig

KEY = bytes(range(16))


def supi(i):
    return f"00101{i:010d}"


def make_config(timeline=(), n_ues=1, delay_us=100_000, duration_s=5.0, feeder=None,
                ground=None, **kw):
    """Build a ScenarioConfig without going through TOML."""
    feeder = feeder or LinkConfig(LinkProfile(one_way_delay_us=delay_us))
    ground = ground or LinkConfig(LinkProfile(one_way_delay_us=5000))
    acts = tuple(Action(int(t * 1e6), supi(i), what, dict(params))
                 for t, i, what, params in timeline)
    return ScenarioConfig(name=kw.pop("name", "test"), duration_us=int(duration_s * 1e6),
                          links={"feeder": feeder, "ground": ground},
                          ues=tuple(UeConfig(supi(i), KEY, 1) for i in range(n_ues)),
                          timeline=acts, **kw)


def ideal_link(delay_us=0):
    return LinkConfig(LinkProfile(one_way_delay_us=delay_us, uplink_bps=math.inf,
                                  downlink_bps=math.inf))


@pytest.fixture
def config():
    return make_config


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
