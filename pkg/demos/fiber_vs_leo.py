"""
Fiber versus a LEO relay
========================

Light in fiber moves at about 2c/3 and fiber routes wander. A LEO path adds
an up and a down hop but travels at c. Where does the relay win?
"""

import numpy as np

from orbit5gc.satlink import OrbitGeometry, compare_fiber_vs_leo

geom = OrbitGeometry(altitude_km=550, elevation_deg=90)
paths = np.array([100, 300, 1000, 3000, 10_000, 20_000])

print(" path_km   fiber_ms   leo_ms   improvement")
for km in paths:
    fiber, leo, gain = compare_fiber_vs_leo(km, geom, hops=2, stretch=1.5)
    print(f"{km:8d}  {fiber / 1e3:9.2f}  {leo / 1e3:7.2f}  {gain:8.3f}")

# Break-even: the relay's fixed 2h/c cost equals the fiber excess.
# 1.5 * L / (2c/3) = L/c + 2h/c  =>  L = 2h / 1.25
print(f"\nbreak-even path at 550 km altitude: {2 * 550 / 1.25:.0f} km")

# Lower elevation means longer slant ranges
for elev in (90, 60, 40, 25):
    g = OrbitGeometry(550, elev)
    print(f"elevation {elev:2d} deg: slant range {g.slant_range_km:7.1f} km")
