"""
Moving horizon
==============

Re-solving on the last ten measurements at every step. Each window's prior
is the previous window's estimate of its first state.
"""

import numpy as np

from epsmooth import (
    SECTION4_X0,
    NoiseSpec,
    encode_constraint_family,
    eps_smooth,
    moving_horizon,
    section4_model,
    section4_noise,
    section4_weights,
    simulate_saturated,
)

model, weights = section4_model(), section4_weights()
w, v = section4_noise(NoiseSpec(seed=8), 20)
truth = simulate_saturated(model, SECTION4_X0, w, v, 1, 4.0)


def cap(start, y_window, horizon):
    return encode_constraint_family("state_bound", {"L": [[0, 1]], "upper": 4.0}, model, horizon)


steps = moving_horizon(model, weights, truth.measurements, window=10, constraints_builder=cap, j=1)
batch = eps_smooth(model, weights, truth.measurements)

print("  t |  filtered x1  filtered x2 | predicted x1 (t+1) | true x1 | batch x1")
for s in steps:
    nxt = truth.states[s.time + 1, 0] if s.time < 20 else float("nan")
    print(f" {s.time:2d} | {s.filtered[0]:11.3f} {s.filtered[1]:11.3f} | {s.predicted[0]:18.3f} |"
          f" {truth.states[s.time, 0]:7.3f} | {batch.xhat[s.time, 0]:8.3f}   (next true x1 {nxt:.3f})")
