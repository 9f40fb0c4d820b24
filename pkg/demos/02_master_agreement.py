"""
Ensemble averages reproduce the master equation
===============================================

Averaging the projectors of many trajectories gives a family of block
density matrices.  It should approach the solution of the hybrid master
equation at rate 1/sqrt(N).
"""
import numpy as np

from eventum import DensityFamily, estimate_density, integrate, simulate_ensemble, trace_distance
from eventum.ensemble import fit_slope
from eventum.models import build_builtin

model, init = build_builtin("testpair")
t = 1.0
exact = integrate(model, DensityFamily.from_state(model, init), t)[-1]
print("master solution block traces:", exact.traces.round(4))

ns = [100, 1000, 10000]
dists = []
first = 0
for n in ns:
    trajs = simulate_ensemble(model, init, 0.0, t, n, master_seed=3, first_index=first)
    first += n
    est = estimate_density(trajs, model, t)
    dists.append(trace_distance(est.family, exact))
    print(f"N={n:6d}  trace distance {dists[-1]:.4f}  bound {5 / np.sqrt(n) + 2e-3:.4f}")

print("fitted log-log slope:", round(fit_slope(ns, dists), 3))
