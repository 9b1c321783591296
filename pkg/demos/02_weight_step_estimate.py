"""Watch the force estimator notice a payload that suddenly gets heavier.

The vehicle hovers with the payload hanging below.  At t = 2 s an extra
50 g is attached to the payload.  The controllers still believe the nominal
mass, so the only way the extra weight enters the loop is through the
sliding-window force estimate, which should settle near -0.49 N.
"""

import numpy as np

from slungload.params import SystemParams
from slungload.sim import Event, Scenario, hover_trajectory, metrics, run

p = SystemParams()
log = run(Scenario(hover_trajectory([0.0, 0.0, 1.0]), 4.0, events=(Event("attach_mass", 2.0, mass=0.05),)), p)

fz = log.f_est[:, 2] + log.f_est[:, 5]
print("   t [s]   est. z force [N]   payload height error [cm]")
for tk in np.arange(1.5, 4.01, 0.1):
    k = int(round((tk - log.t[0]) / 1e-3))
    k = min(k, len(log.t) - 1)
    err = 100 * (log.x_L[k, 2] - log.ref_L[k, 2])
    print(f"   {log.t[k]:4.1f}        {fz[k]:+.3f}              {err:+.2f}")

print(f"expected step: {-0.05 * p.g:+.3f} N")
m = metrics(log, p)
print(f"whole-run payload RMSE {m['rmse_L']:.2f} cm, max {m['max_L']:.2f} cm")
