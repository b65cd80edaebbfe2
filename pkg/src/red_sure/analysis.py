"""Noise-as-weight-decay checks and training diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln


@dataclass(frozen=True)
class DecayCheckReport:
    empirical_lhs: float
    analytic_rhs: float
    n_trials: int
    std_err: float
    passed: bool
    note: str = ""

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


NOISE_DECAY_NOTE = (
    "penalty checked as sigma^2*||w||^2 in expectation over the noise; "
    "a K*sigma^2*||w||^2 penalty does not match E[(w^T n)^2]"
)


def noise_decay_check(w, z_star, y, sigma, n_trials=100_000, rng=None, chunk=20_000):
    """Compare E[(w^T(z*+n) - y)^2] with (w^T z* - y)^2 + sigma^2 ||w||^2.

    Passes when the Monte-Carlo mean lies within 4 standard errors.
    """
    w = np.asarray(w, dtype=np.float64)
    z_star = np.asarray(z_star, dtype=np.float64)
    rng = np.random.default_rng(0) if rng is None else rng
    clean = float(w @ z_star - y)
    rhs = clean**2 + sigma**2 * float(w @ w)
    if sigma == 0:
        return DecayCheckReport(clean**2, rhs, int(n_trials), 0.0, bool(clean**2 == rhs), NOISE_DECAY_NOTE)
    # w^T n ~ N(0, sigma^2 ||w||^2) is sampled coordinate-wise, not in closed form
    s, s2, done = 0.0, 0.0, 0
    while done < n_trials:
        n = min(chunk, n_trials - done)
        noise = rng.normal(0.0, sigma, size=(n, w.size))
        sq = (clean + noise @ w) ** 2
        s += sq.sum()
        s2 += (sq**2).sum()
        done += n
    mean = s / n_trials
    var = max(s2 / n_trials - mean**2, 0.0) * n_trials / max(n_trials - 1, 1)
    se = float(np.sqrt(var / n_trials))
    return DecayCheckReport(float(mean), rhs, int(n_trials), se, bool(abs(mean - rhs) <= 4 * se), NOISE_DECAY_NOTE)


def residual_decay_term(w, e) -> float:
    """cos^2(e, w) ||e||^2 ||w||^2, evaluated as (w^T e)^2 (zero if e or w is 0)."""
    w = np.asarray(w, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if w.shape != e.shape:
        raise ValueError(f"shape mismatch {w.shape} vs {e.shape}")
    return float(np.dot(w, e)) ** 2


def squared_error_decomposition(w, z_star, e, y):
    """Exact split of (w^T(z*+e) - y)^2 into clean, cross and residual terms."""
    w = np.asarray(w, dtype=np.float64)
    clean = float(w @ np.asarray(z_star) - y)
    proj = float(w @ np.asarray(e))
    return clean**2, 2.0 * clean * proj, proj**2


def feature_entropy(features, k: int = 3) -> float:
    """Kozachenko-Leonenko differential entropy estimate (nats).

    H = psi(N) - psi(k) + log V_d + (d/N) sum_i log r_i, where r_i is the
    Euclidean distance from point i to its k-th nearest neighbour and V_d the
    volume of the unit d-ball.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    N, d = X.shape
    if N < 2:
        raise ValueError("need at least two samples")
    k = min(k, N - 1)
    dist, _ = cKDTree(X).query(X, k=k + 1)
    r = dist[:, -1]
    if np.any(r < 1e-12):
        warnings.warn("duplicate points: k-NN distances floored at 1e-12", RuntimeWarning, stacklevel=2)
        r = np.maximum(r, 1e-12)
    log_vd = 0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1.0)
    return float(digamma(N) - digamma(k) + log_vd + d * np.mean(np.log(r)))


def weight_norm(model) -> float:
    """L2 norm of the regression layer's weights (bias excluded).

    Accepts a model with a ``head`` layer, a layer, or a raw weight array.
    """
    head = getattr(model, "head", model)
    weight = getattr(head, "weight", head)
    return float(np.linalg.norm(np.asarray(weight, dtype=np.float64).ravel()))
