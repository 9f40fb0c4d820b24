"""
A detector watching a moving packet
===================================

A packet moves right at unit speed toward a narrow Gaussian detector at the
origin.  In the point-detector limit the chance of a click by time t is
(1 - exp(-kappa)) times the packet mass that has passed the detector.
"""
import numpy as np

from eventum import simulate_ensemble
from eventum.models import build_builtin, detection_prob_closed_form

for kappa in (0.5, 1.0, 2.0):
    model, init = build_builtin("detector1d", {"kappa": kappa})
    spec = model.meta["spec"]
    trajs = simulate_ensemble(model, init, 0.0, 3.0, 2000, master_seed=5)
    first = np.array([tr.events[0].time if tr.events else np.inf for tr in trajs])
    print(f"kappa={kappa}: efficiency 1 - exp(-kappa) = {1 - np.exp(-kappa):.4f}")
    for t in (1.0, 1.5, 2.0, 3.0):
        ref = detection_prob_closed_form(spec, init.psi, t)
        print(f"   t={t:3.1f}  simulated {np.mean(first <= t):.4f}  closed form {ref:.4f}")
