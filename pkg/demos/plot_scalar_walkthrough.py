"""
Scalar walkthrough
==================

A random walk observed twice, smoothed with the quadratic loss and then with
tubes of increasing width. Residuals inside the tube stop pulling on the
estimate.
"""

import numpy as np

from epsmooth import SystemModel, WeightSpec, check_kkt, eps_smooth, h2_smooth, primal_brute_force

model = SystemModel(A=[[1.0]], B=[[1.0]], C=[[1.0]], xbar0=[0.0])
y = np.array([[1.0], [1.0]])

quad = h2_smooth(model, WeightSpec([[1.0]], [[1.0]], [[1.0]], [0.0]), y)
print("quadratic loss      xhat =", quad.xhat.ravel())

for eps in (0.25, 0.5, 1.0, 2.0):
    w = WeightSpec([[1.0]], [[1.0]], [[1.0]], [eps])
    res = eps_smooth(model, w, y)
    oracle = primal_brute_force(model, w, y)
    print(
        f"eps = {eps:<4}  xhat = {np.round(res.xhat.ravel(), 6)}  theta = {np.round(res.dual.Theta, 6)}"
        f"  |dual - oracle| = {np.max(np.abs(res.xhat - oracle.xhat)):.1e}"
        f"  kkt ok = {check_kkt(model, w, y, None, res).passed}"
    )

# Once eps covers every measurement the estimate collapses onto the prior.
