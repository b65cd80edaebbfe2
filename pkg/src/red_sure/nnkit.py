"""Small feedforward network kit with hand-written backprop.

Everything runs in float64. Inputs may be a single vector ``(in,)`` or a
batch ``(N, in)``; outputs keep the same leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def glorot(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "DenseLayer":
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-limit, limit, size=(out_dim, in_dim)), np.zeros(out_dim))

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int) -> "DenseLayer":
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim))

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weight.T + self.bias


@dataclass
class Cache:
    """Activations recorded by :meth:`MLP.forward`."""

    owner: int
    version: int
    inputs: list
    preacts: list
    squeeze: bool


@dataclass
class MLP:
    """Stack of dense layers, each followed by ``relu`` or ``identity``."""

    layers: list
    activations: list
    _version: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        if len(self.layers) != len(self.activations):
            raise ShapeError("need one activation per layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def build(cls, dims, rng, hidden_activation="relu") -> "MLP":
        """Glorot-initialised MLP through ``dims``; the last layer is linear."""
        dims = list(dims)
        layers = [DenseLayer.glorot(i, o, rng) for i, o in zip(dims, dims[1:])]
        acts = [hidden_activation] * (len(layers) - 1) + ["identity"]
        return cls(layers, acts)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim if self.layers else 0

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim if self.layers else 0

    def params(self) -> list:
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live parameter arrays."""
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def touch(self):
        """Mark parameters as changed; invalidates earlier caches."""
        self._version += 1

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ShapeError(f"expected input dim {self.in_dim}, got shape {x.shape}")
        inputs, preacts = [], []
        for layer, act in zip(self.layers, self.activations):
            inputs.append(h)
            a = h @ layer.weight.T + layer.bias
            preacts.append(a)
            h = np.maximum(a, 0.0) if act == "relu" else a
        cache = Cache(id(self), self._version, inputs, preacts, squeeze)
        return (h[0] if squeeze else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: Cache, grad_out):
        """Reverse-mode pass. Returns ``(param_grads, grad_in)``.

        Parameter gradients are summed over the batch and ordered like
        :meth:`params`.
        """
        if cache.owner != id(self) or cache.version != self._version:
            raise StaleCacheError("cache does not belong to the current parameters")
        g = np.asarray(grad_out, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != (cache.inputs[0].shape[0], self.out_dim):
            raise ShapeError(f"grad_out shape {np.shape(grad_out)} does not match output")
        grads = [None] * (2 * len(self.layers))
        for i in reversed(range(len(self.layers))):
            if self.activations[i] == "relu":
                # subgradient at exactly 0 is 0
                g = g * (cache.preacts[i] > 0.0)
            grads[2 * i] = g.T @ cache.inputs[i]
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.layers[i].weight
        return grads, (g[0] if cache.squeeze else g)

    def jacobian(self, x):
        """Input Jacobian, shape ``(out, in)`` or ``(N, out, in)`` for a batch."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        _, cache = self.forward(x)
        n = cache.inputs[0].shape[0]
        if not self.layers:
            jac = np.broadcast_to(np.eye(x.shape[-1]), (n, x.shape[-1], x.shape[-1]))
            return jac[0] if squeeze else jac
        jac = None
        for i, (layer, act) in enumerate(zip(self.layers, self.activations)):
            if jac is None:
                jac = np.broadcast_to(layer.weight, (n,) + layer.weight.shape)
            else:
                jac = np.matmul(layer.weight, jac)
            if act == "relu":
                jac = jac * (cache.preacts[i] > 0.0)[:, :, None]
        return jac[0] if squeeze else jac

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params()))

    def copy(self) -> "MLP":
        return MLP(
            [DenseLayer(l.weight.copy(), l.bias.copy()) for l in self.layers],
            list(self.activations),
        )


class Adam:
    """Adaptive-moment optimizer over a fixed list of arrays, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if len(params) != len(self.m):
            raise ShapeError("parameter list length changed")
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape or p.shape != self.m[i].shape:
                raise ShapeError(f"param {i}: shape {p.shape} vs grad {g.shape}")
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
                raise NonFiniteGradientError(
                    f"param {i} (shape {p.shape}) has {bad} non-finite gradient "
                    f"entries at step {self.t + 1}"
                )
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
        return params

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
        }

    @classmethod
    def from_state_dict(cls, params, state) -> "Adam":
        opt = cls(params, state["lr"], state["beta1"], state["beta2"], state["eps"])
        opt.t = int(state["t"])
        opt.m = [np.array(a, dtype=np.float64).reshape(p.shape) for a, p in zip(state["m"], params)]
        opt.v = [np.array(a, dtype=np.float64).reshape(p.shape) for a, p in zip(state["v"], params)]
        return opt


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / ||n||`` on one array (0 when both vanish)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.linalg.norm(numeric)
    diff = np.linalg.norm(analytic - numeric)
    # arrays that are zero up to finite-difference noise (dead ReLU units) agree
    if max(scale, np.linalg.norm(analytic)) < 1e-10:
        return 0.0
    if scale == 0.0:
        return float("inf")
    return float(diff / scale)


def numeric_grads(params, loss, step=1e-5):
    """Central finite differences of ``loss()`` w.r.t. each array in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss()
            flat[j] = orig - step
            down = loss()
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * step)
        out.append(g)
    return out


def grad_check(mlp: MLP, loss_fn, x, step=1e-5) -> float:
    """Worst per-array relative error between backprop and finite differences.

    ``loss_fn(y)`` must return ``(loss, dloss/dy)`` for the network output.
    """
    y, cache = mlp.forward(x)
    _, gy = loss_fn(y)
    analytic, _ = mlp.backward(cache, gy)
    numeric = numeric_grads(mlp.params(), lambda: loss_fn(mlp(x))[0], step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
