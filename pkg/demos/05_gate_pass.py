"""An aggressive pass through a 1 m gate.

The limits are opened up (5.9 m/s, 9 m/s^2, 70 degree tilt) and time is
weighted heavily, so the optimizer pushes the payload hard while keeping
vehicle, cable and payload clear of the gate frame.
"""

import sys

from slungload.bench import gate_run

opening = float(sys.argv[1]) if len(sys.argv) > 1 else 1.0
res = gate_run(opening)
plan = res["plan"]
print(f"gate opening {res['opening_m']:.2f} m: feasible {plan['feasible']}, collision-free {res['collision_free']}")
print(f"planned in {res['plan_ms']:.0f} ms; {plan['length_m']:.1f} m in {plan['duration_s']:.2f} s")
print(f"peak payload speed {res['peak_speed']:.2f} m/s, peak acceleration {res['peak_accel']:.2f} m/s^2")
print(f"minimum cable tension {plan['min_tension_N']:.2f} N")
