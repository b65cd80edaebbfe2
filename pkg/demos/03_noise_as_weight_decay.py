"""
Feature noise acts like weight decay
====================================

For a linear predictor w, E[(w^T(z* + n) - y)^2] = (w^T z* - y)^2 + sigma^2 ||w||^2.
Noise in the inputs therefore charges the squared norm of w. A denoiser
shrinks that charge to (w^T e)^2 with e the residual error after denoising.
"""

import numpy as np

from red_sure.analysis import noise_decay_check, residual_decay_term

rng = np.random.default_rng(1)
w = rng.normal(size=5)
z_star = rng.normal(size=5)
y = 0.3

for sigma in (0.0, 0.5, 1.0, 2.0):
    rep = noise_decay_check(w, z_star, y, sigma, n_trials=100_000, rng=rng)
    print(f"sigma={sigma:3.1f}  monte carlo {rep.empirical_lhs:8.4f}  closed form {rep.analytic_rhs:8.4f}  "
          f"pass={rep.passed}")

# The penalty grows with sigma^2, not K * sigma^2
print("penalty per unit sigma^2:", float(w @ w))

# The residual version depends on the direction of e relative to w
e = 0.1 * rng.normal(size=5)
print("residual penalty (w^T e)^2:", residual_decay_term(w, e))
print("orthogonal residual       :", residual_decay_term(np.array([1.0, 0.0]), np.array([0.0, 2.0])))
