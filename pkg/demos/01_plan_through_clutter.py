"""Plan a payload trajectory through a cluttered room and audit it.

The front end searches a kinodynamic lattice for the payload; the back end
refines the polynomial so that the quadrotor body, the cable and the payload
all stay clear of obstacles while thrust, tilt and cable tension respect
their limits.  The audit re-samples the result densely and is the only
judge of feasibility.

    python3 demos/01_plan_through_clutter.py [seed]
"""

import sys

import numpy as np

from slungload.bench import peak_kinematics, plan_and_audit
from slungload.params import SystemParams
from slungload.trajopt import DynamicLimits
from slungload.worlds import make_world

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 5
world = make_world("clutter", seed)
esdf = world.esdf()
print(f"clutter world #{seed}: {len(world.primitives)} pillars, start {world.start} -> goal {world.goal}")

out = plan_and_audit(esdf, world.start, world.goal)
print(f"planned in {out.plan_ms:.0f} ms after {out.iterations} refinement iterations")
print(f"feasible per audit: {out.feasible}  {out.reason}")
if out.poly is None:
    sys.exit(1)

v, a = peak_kinematics(out.poly)
print(f"length {out.length:.2f} m, duration {out.poly.total_duration:.2f} s, peak payload speed {v:.2f} m/s, accel {a:.2f} m/s^2")
print(f"lowest cable tension along the way: {out.min_tension:.2f} N")
print("worst violation per constraint (0 means satisfied):")
for name, val in out.violations.items():
    print(f"  {name:<13}{val:.2e}")

# clearance of the payload along the path, straight from the distance field
t = np.linspace(0, out.poly.total_duration, 400)
d, _ = esdf.query_batch(out.poly.sample(t))
print(f"closest payload approach to an obstacle: {d.min():.2f} m (required > {DynamicLimits().d_L:.2f})")
p = SystemParams()
print(f"payload mass {p.m_L} kg on a {p.l} m cable; straight-line distance {np.linalg.norm(world.goal - world.start):.2f} m")
