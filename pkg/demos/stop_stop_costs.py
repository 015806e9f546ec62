"""
What a move costs
=================

Every roadmap edge is priced by flying it: start at rest, follow the spline,
and stop once the vehicle sits inside a 2% band around the target. The energy
drawn up to that moment is the edge cost.
"""
import numpy as np

from amphiplan.costtable import TableParams, build_table, simulate_stop_stop, transition_cost

# A few single moves in each medium. Water is dense and slow, air is thin
# and the rotors work harder to hold the vehicle up.
for medium in ("air", "water"):
    for d in [(1, 0, 0), (4, 0, 0), (8, 0, 0), (0, 0, 3), (0, 0, -3)]:
        E, T = simulate_stop_stop(d, medium)
        dist = np.linalg.norm(d)
        print(f"{medium:5s} {str(d):12s} {E:8.1f} J  {T:5.1f} s  {E / dist:7.1f} J/m")

# Short moves are not always the cheapest per meter. A one-meter hop at
# 1 m/s asks for more acceleration than the tilt limit allows under water,
# so the vehicle lags and then settles slowly.

# A small table: every displacement within two voxels.
table = build_table("water", TableParams(), reach=2)
print("\nwater table, reach 2:", table.energy.shape, "stored entries")
print("cheapest rate:", round(table.min_rate(), 2), "J/m")

# Crossing the surface is priced as an air part plus a water part, so going
# down and coming up are not the same price.
tables = {"air": build_table("air", TableParams(), reach=2), "water": table}
level = 4.5
print("\nsink 2 m through the surface:", round(transition_cost(tables, (0, 0, 5), (0, 0, 3), level), 1), "J")
print("rise 2 m through the surface:", round(transition_cost(tables, (0, 0, 3), (0, 0, 5), level), 1), "J")
