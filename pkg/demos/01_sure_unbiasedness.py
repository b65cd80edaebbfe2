"""
Estimating denoising error without the clean signal
====================================================

A denoiser h sees z = z* + n with n ~ N(0, sigma^2 I). Its true error
(1/K)||h(z) - z*||^2 needs z*, but the risk estimate below only needs z,
sigma and the divergence of h. Averaged over noise draws the two agree.
"""

import numpy as np

from red_sure.nnkit import MLP
from red_sure.sure import exact_divergence, mc_divergence, mse_oracle, sure_exact
from red_sure.verification import linear_map

rng = np.random.default_rng(0)
K, sigma, n_draws = 32, 1.0, 20_000

# a random one-hidden-layer ReLU network plays the denoiser
h = MLP.build([K, 64, K], rng)
z_star = rng.normal(size=K)
Z = z_star + sigma * rng.standard_normal((n_draws, K))

true_mse = mse_oracle(h(Z), np.broadcast_to(z_star, Z.shape))
estimate = sure_exact(h, Z, sigma, exact_divergence(h, Z))
se = np.std(estimate - true_mse, ddof=1) / np.sqrt(n_draws)
print(f"mean oracle MSE     {true_mse.mean():.4f}")
print(f"mean risk estimate  {estimate.mean():.4f}  (gap {abs(estimate.mean() - true_mse.mean()):.4f}, SE {se:.4f})")

# The divergence is the trace of the Jacobian. For large networks it is
# estimated with random probes instead: (1/eps) b^T (h(z + eps b) - h(z)).
# A shrinkage map 0.5*I plus a small perturbation has trace near K/2.
g = linear_map(0.5 * np.eye(K) + rng.normal(scale=0.05, size=(K, K)))
z = Z[0]
exact = exact_divergence(g, z)
approx = mc_divergence(g, z, epsilon=1e-4, probes=100_000, rng=rng)
print(f"divergence exact {exact:.3f}, probe estimate {approx:.3f}")

# Probes must have unit variance; with variance sigma^2 the estimate is
# scaled by sigma^2.
scaled = mc_divergence(g, z, epsilon=1e-4, probes=100_000, rng=rng, probe_std=2.0)
print(f"variance-4 probes give {scaled / exact:.2f} x the trace")
