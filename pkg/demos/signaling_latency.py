"""
Registration latency over a slow feeder link
============================================

Registration is five one-way crossings of the gNB-satellite link plus a
little processing. Sweep the link delay and check the slope.
"""

import numpy as np

from orbit5gc import load_scenario, run_scenario
from orbit5gc.satlink import LinkProfile
from orbit5gc.scenario import LinkConfig

base = load_scenario("sat200ms", env={})

delays_ms = np.array([10, 25, 50, 100, 150, 200, 300])
reg_ms, exchange_ms = [], []
for d in delays_ms:
    cfg = load_scenario("sat200ms", env={})
    cfg.links["feeder"] = LinkConfig(LinkProfile(one_way_delay_us=int(d * 1000)))
    s = run_scenario(cfg).summary["latency_ms"]
    reg_ms.append(s["registration"]["mean"])
    exchange_ms.append(s["registration_exchange"]["mean"])

reg_ms = np.array(reg_ms)
print(" delay  registration  per-exchange")
for d, r, e in zip(delays_ms, reg_ms, exchange_ms):
    print(f"{d:5d}ms  {r:10.3f}ms  {e:10.3f}ms")

# Slope should be 5 crossings; the intercept is processing plus serialization.
slope, intercept = np.polyfit(delays_ms, reg_ms, 1)
print(f"\nfit: registration = {slope:.4f} x delay + {intercept:.3f} ms")

# The shipped 100 ms case, end to end
summary = run_scenario(base).summary
print("\nsat200ms:", summary["latency_ms"]["registration"]["mean"], "ms registration,",
      summary["counters"]["delivered_ground"], "packets delivered")
