"""Stein's unbiased risk estimate for denoisers under AWGN.

Conventions: ``K`` is the feature dimension; divergences are returned
un-normalised (the Jacobian trace) and the ``1/K`` is applied by the risk
estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from red_sure.data import ConfigError
from red_sure.nnkit import MLP, ShapeError

PROBE_VARIANCES = ("unit", "sigma_squared")


@dataclass(frozen=True)
class SureConfig:
    """Settings of the Monte-Carlo SURE loss.

    ``epsilon=None`` picks ``1e-4 * std(z)`` of the batch at hand, floored at
    ``1e-6``. ``probe_variance="sigma_squared"`` draws b ~ N(0, sigma^2 I)
    instead of unit-variance probes; that variant is biased by a factor
    sigma^2 and exists to measure that bias.
    """

    sigma: float = 1.0
    epsilon: float | None = None
    probes_per_sample: int = 1
    probe_seed: int = 0
    probe_variance: str = "unit"

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.probes_per_sample) < 1:
            raise ConfigError("probes_per_sample must be >= 1")
        if self.probe_variance not in PROBE_VARIANCES:
            raise ConfigError(f"probe_variance must be one of {PROBE_VARIANCES}")

    def epsilon_for(self, Z) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        return default_epsilon(Z)

    def probe_std(self) -> float:
        return 1.0 if self.probe_variance == "unit" else float(self.sigma)


def default_epsilon(Z) -> float:
    return max(1e-4 * float(np.std(Z)), 1e-6)


def _check_epsilon(epsilon):
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")


def mse_oracle(z_hat, z_star):
    """(1/K)||z* - z_hat||^2; row-wise for 2-D input."""
    z_hat = np.asarray(z_hat, dtype=np.float64)
    z_star = np.asarray(z_star, dtype=np.float64)
    if z_hat.shape != z_star.shape:
        raise ShapeError(f"shape mismatch {z_hat.shape} vs {z_star.shape}")
    return np.mean((z_star - z_hat) ** 2, axis=-1)


def exact_divergence(h: MLP, z):
    """Trace of the Jacobian of ``h`` at ``z`` (row-wise for a batch)."""
    if h.in_dim != h.out_dim:
        raise ShapeError(f"divergence needs a square map, got {h.in_dim} -> {h.out_dim}")
    return np.trace(h.jacobian(z), axis1=-2, axis2=-1)


def sure_exact(h, z, sigma: float, divergence):
    """(1/K)||z - h(z)||^2 - sigma^2 + (2 sigma^2 / K) * divergence."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    z = np.asarray(z, dtype=np.float64)
    K = z.shape[-1]
    resid = np.mean((z - h(z)) ** 2, axis=-1)
    return resid - sigma**2 + (2.0 * sigma**2 / K) * np.asarray(divergence)


def mc_divergence(h, z, epsilon: float, probes: int, rng: np.random.Generator,
                  probe_std: float = 1.0, chunk: int = 8192) -> float:
    """Average of (1/eps) b^T (h(z + eps b) - h(z)) over ``probes`` draws of b."""
    _check_epsilon(epsilon)
    if probes < 1:
        raise ConfigError("need at least one probe")
    z = np.asarray(z, dtype=np.float64)
    base = h(z[None, :])
    total, done = 0.0, 0
    while done < probes:
        n = min(chunk, probes - done)
        b = probe_std * rng.standard_normal((n, z.size))
        diff = h(z + epsilon * b) - base
        total += float(np.sum(b * diff)) / epsilon
        done += n
    return total / probes


def mc_sure_terms(Z, HZ, HZP, B, sigma, epsilon):
    """Per-sample MC-SURE values and their gradients w.r.t. the two outputs.

    ``HZ = h(Z)`` is ``(N, K)``; ``HZP = h(Z + eps B)`` and ``B`` are
    ``(N, P, K)`` for ``P`` probes per sample.
    """
    K = Z.shape[-1]
    P = B.shape[1]
    c = 2.0 * sigma**2 / (epsilon * K)
    resid = Z - HZ
    div = np.einsum("npk,npk->n", B, HZP - HZ[:, None, :]) / P
    loss = np.mean(resid**2, axis=-1) - sigma**2 + c * div
    d_hz = -(2.0 / K) * resid - (c / P) * B.sum(axis=1)
    d_hzp = (c / P) * B
    return loss, d_hz, d_hzp


def draw_probes(rng, N, P, K, std=1.0):
    return std * rng.standard_normal((N, P, K))


def mc_sure_loss(h: MLP, z, config: SureConfig, rng: np.random.Generator, probes=None):
    """Mean MC-SURE over the rows of ``z`` and its gradient w.r.t. ``h``'s params.

    The gradient flows through both ``h(z)`` and ``h(z + eps b)``. Returns
    ``(loss, grads)`` with grads ordered like ``h.params()``.
    """
    Z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    N, K = Z.shape
    eps = config.epsilon_for(Z)
    B = probes if probes is not None else draw_probes(
        rng, N, config.probes_per_sample, K, config.probe_std())
    P = B.shape[1]
    HZ, cache = h.forward(Z)
    HZP, cache_p = h.forward((Z[:, None, :] + eps * B).reshape(N * P, K))
    loss, d_hz, d_hzp = mc_sure_terms(Z, HZ, HZP.reshape(N, P, K), B, config.sigma, eps)
    g1, _ = h.backward(cache, d_hz / N)
    g2, _ = h.backward(cache_p, d_hzp.reshape(N * P, K) / N)
    return float(np.mean(loss)), [a + b for a, b in zip(g1, g2)]
