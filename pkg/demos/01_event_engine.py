"""
Events in a two-state hybrid system
===================================

A classical pointer with two states is coupled to a qubit.  Between events
the qubit follows a damped Schrodinger flow; an event fires when the squared
norm drops below a uniform draw, and the pointer then jumps.
"""
import numpy as np

from eventum import PureHybridState, RngStream, jump_probs, jump_rate, run_trajectory
from eventum.models import random_model

model = random_model(seed=7, m=2, dim=2)
init = PureHybridState.make(0, [1, 0])

# instantaneous rate and the channel distribution at the start
print("rate out of state 1:", round(jump_rate(model, 0, init.psi), 4))
print("channel probabilities:", jump_probs(model, 0, init.psi).round(4))

# one trajectory: each event logs the time, the labels and the norm at the jump
traj = run_trajectory(model, init, 0.0, 5.0, RngStream(master_seed=1, stream_index=0))
for ev in traj.events:
    print(f"t={ev.time:7.4f}  {ev.from_state + 1} -> {ev.to_state + 1}  "
          f"norm^2 before jump {ev.pre_jump_norm_sq:.4f}")

# the same stream index replays the same history
again = run_trajectory(model, init, 0.0, 5.0, RngStream(1, 0))
print("replay identical:", [e.time for e in again.events] == [e.time for e in traj.events])
