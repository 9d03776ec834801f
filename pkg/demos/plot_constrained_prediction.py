"""
Constrained prediction
======================

Predicting two steps past the data. Without constraints the prediction is
the filtered state pushed through the dynamics; a cap on the predicted state
bends the whole trajectory, and the oracle over the original variables agrees.
"""

import numpy as np

from epsmooth import (
    SECTION4_X0,
    NoiseSpec,
    encode_constraint_family,
    eps_predict,
    primal_brute_force,
    section4_model,
    section4_noise,
    section4_weights,
    simulate_saturated,
)

model, weights = section4_model(), section4_weights()
w, v = section4_noise(NoiseSpec(seed=6), 8)
y = simulate_saturated(model, SECTION4_X0, w, v, 1, 4.0).measurements
N, j = len(y), 2

free = eps_predict(model, weights, y, None, j)
pushed = np.linalg.matrix_power(model.A, j) @ free.xhat[N]
print("free prediction    ", free.xhat[-1], " A^j xhat_N =", pushed)

level = free.xhat[-1, 1] - 1.0
rows = encode_constraint_family("state_bound", {"L": [0, 1], "upper": level, "steps": [N + j]}, model, N + j)
capped = eps_predict(model, weights, y, rows, j)
oracle = primal_brute_force(model, weights, y, rows, j=j)
print("capped prediction  ", capped.xhat[-1], " multiplier xi =", capped.dual.xi)
print("oracle prediction  ", oracle.xhat[-1])
print("costate on the future segment:", capped.lam[N:].ravel())
