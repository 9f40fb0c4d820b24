"""
A fuzzy clock
=============

Each tick advances a classical counter and applies a unitary to the quantum
register.  The quantum state never influences the ticking, so tick counts are
Poisson with mean kappa * T and the gaps are exponential.
"""
import numpy as np
from scipy import stats

from eventum import simulate_ensemble
from eventum.models import build_builtin, tick_gaps

kappa, horizon = 2.0, 10.0
model, init = build_builtin("clock", {"kappa": kappa, "i_max": 60, "isometry": "random"})
trajs = simulate_ensemble(model, init, 0.0, horizon, 3000, master_seed=11)

counts = np.array([tr.n_events for tr in trajs])
print(f"tick count mean {counts.mean():.3f}, variance {counts.var(ddof=1):.3f}, "
      f"Poisson value {kappa * horizon}")

# only the first few gaps of each run: the last, unfinished gap would bias a pooled sample
gaps = tick_gaps(trajs, k=5)
print("KS p-value against Exp(kappa):", round(stats.kstest(gaps, "expon", args=(0, 1 / kappa)).pvalue, 3))

norms = [abs(np.linalg.norm(e.post_jump_psi) - 1) for tr in trajs for e in tr.events]
print(f"largest post-tick norm error {max(norms):.1e}")
