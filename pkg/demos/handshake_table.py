"""
One round trip versus two
=========================

Fit link delay and per-packet processing to the measured 1-RTT capture,
then compare connection establishment for both handshake schemes.
"""

import numpy as np

from orbit5gc.transport import (HandshakeScheme, REFERENCE_ELAPSED_MS, bench_profile, calibrate,
                                compare_schemes, run_handshake)

cal = calibrate()
print(f"fitted one-way delay {cal.one_way_delay_us:.0f} us, processing {cal.processing_us:.0f} us")

one = run_handshake(HandshakeScheme.one_rtt(), cal.profile(), cal.processing_us)
print(one.table())
print("measured:", REFERENCE_ELAPSED_MS)
print("residuals (ms):", np.round(cal.residual_ms, 3))

two = run_handshake(HandshakeScheme.two_rtt(), cal.profile(), cal.processing_us)
print("\n2-RTT")
print(two.table())

# As delay grows the ratio tends to 2, since each scheme is a count of crossings.
print("\n delay_us   1-RTT ms   2-RTT ms   ratio")
for d in np.geomspace(10, 300_000, 8):
    a, b, r = compare_schemes(bench_profile(d), cal.processing_us)
    print(f"{d:9.0f}  {a:9.3f}  {b:9.3f}  {r:6.3f}")
