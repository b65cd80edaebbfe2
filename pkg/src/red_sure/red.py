"""Joint training of the denoising encoder and the linear regression head.

Total loss on a minibatch of N samples::

    (1/N) sum_i [ (1/M)||f_w(h(z_i)) - y_i||^2 + lam * MC-SURE(h, z_i) ]
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from red_sure import metrics
from red_sure.analysis import feature_entropy, weight_norm
from red_sure.data import ConfigError, DataError, Dataset, FeatureVector
from red_sure.fileio import read_json, write_json
from red_sure.nnkit import MLP, Adam, DenseLayer, ShapeError
from red_sure.sure import SureConfig, default_epsilon, mc_sure_terms

CHECKPOINT_VERSION = 1

LOG_COLUMNS = (
    "epoch", "train_loss", "train_mse", "train_mcsure",
    "val_rmse", "val_mae", "val_pcc", "head_weight_l2", "feature_entropy",
)


class TrainingError(RuntimeError):
    pass


@dataclass
class RedModel:
    """Encoder ``h`` (K -> H -> K, or None for plain regression) and head ``f_w``."""

    encoder: MLP | None
    head: DenseLayer
    sure_config: SureConfig = field(default_factory=SureConfig)
    optimizer_state: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.encoder is not None:
            if self.encoder.in_dim != self.encoder.out_dim:
                raise ShapeError("encoder must map R^K to R^K")
            if self.head.in_dim != self.encoder.out_dim:
                raise ShapeError("head input dim must equal K")

    @classmethod
    def init(cls, K, M, hidden=None, rng=None, sure_config=None, with_encoder=True,
             encoder_init_scale=1.0):
        """Glorot-uniform layers; encoder weights are further multiplied by
        ``encoder_init_scale``."""
        rng = np.random.default_rng(0) if rng is None else rng
        encoder = None
        if with_encoder:
            encoder = MLP.build([K, hidden or K, K], rng)
            for layer in encoder.layers:
                layer.weight *= encoder_init_scale
        head = DenseLayer.glorot(K, M, rng)
        return cls(encoder, head, sure_config or SureConfig())

    @property
    def K(self) -> int:
        return self.head.in_dim

    @property
    def M(self) -> int:
        return self.head.out_dim

    def params(self) -> list:
        enc = self.encoder.params() if self.encoder is not None else []
        return enc + [self.head.weight, self.head.bias]

    def touch(self):
        if self.encoder is not None:
            self.encoder.touch()

    def denoise(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        if Z.shape[-1] != self.K:
            raise ShapeError(f"expected {self.K} features, got {Z.shape[-1]}")
        return Z.copy() if self.encoder is None else self.encoder(Z)

    def predict(self, Z):
        return self.head(self.denoise(Z))

    def copy(self) -> "RedModel":
        enc = None if self.encoder is None else self.encoder.copy()
        return RedModel(enc, DenseLayer(self.head.weight.copy(), self.head.bias.copy()), self.sure_config)


def _values(z):
    return z.values if isinstance(z, FeatureVector) else np.asarray(z, dtype=np.float64)


def red_predict(model: RedModel, z):
    """f_w(h(z)) for a feature vector or an ``(N, K)`` array."""
    return model.predict(_values(z))


def denoise(model: RedModel, z):
    return model.denoise(_values(z))


def count_params(model) -> int:
    """Number of trainable scalars in a RedModel, MLP, layer or None."""
    if model is None:
        return 0
    if isinstance(model, DenseLayer):
        return model.weight.size + model.bias.size
    if isinstance(model, MLP):
        return model.n_params()
    return count_params(model.encoder) + count_params(model.head)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    epochs: int = 1000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    sure: SureConfig = field(default_factory=SureConfig)
    patience: int = 50
    hidden: int | None = None
    redraw_probes: bool = True
    log_entropy: bool = True
    # full-scale Glorot init starts the encoder as a random full-rank map and
    # the SURE fit then keeps much of the noise subspace
    encoder_init_scale: float = 0.1

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ConfigError("lam must be finite and >= 0")
        for name in ("epochs", "batch_size", "patience"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.hidden is not None and self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if not self.encoder_init_scale > 0:
            raise ConfigError("encoder_init_scale must be > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("sure"), dict):
            d["sure"] = SureConfig(**d["sure"])
        return cls(**d)


def red_objective(model: RedModel, Z, Y, lam, sure_config, probes=None, epsilon=None):
    """Loss terms and gradients (ordered like ``model.params()``) on one batch.

    Returns ``(total, mse, mcsure, grads)``. ``probes`` is ``(N, P, K)``; it
    is required when the model has an encoder. ``mcsure`` is 0 for plain
    regression.
    """
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    N, K = Z.shape
    M = Y.shape[1]
    enc = model.encoder
    if enc is not None:
        eps = default_epsilon(Z) if epsilon is None else epsilon
        P = probes.shape[1]
        ZH, cache = enc.forward(Z)
        ZP, cache_p = enc.forward((Z[:, None, :] + eps * probes).reshape(N * P, K))
        sure_vals, d_hz, d_hzp = mc_sure_terms(Z, ZH, ZP.reshape(N, P, K), probes, sure_config.sigma, eps)
        mcsure = float(np.mean(sure_vals))
    else:
        ZH, mcsure = Z, 0.0
    resid = ZH @ model.head.weight.T + model.head.bias - Y
    mse = float(np.mean(np.sum(resid**2, axis=1) / M))
    total = mse + lam * mcsure
    dy = (2.0 / (M * N)) * resid
    grads = [dy.T @ ZH, dy.sum(axis=0)]
    if enc is not None:
        d_zh = dy @ model.head.weight + (lam / N) * d_hz
        g1, _ = enc.backward(cache, d_zh)
        g2, _ = enc.backward(cache_p, (lam / N) * d_hzp.reshape(N * P, K))
        grads = [a + b for a, b in zip(g1, g2)] + grads
    return total, mse, mcsure, grads


def _safe_pcc(pred, truth):
    try:
        return metrics.pcc(pred, truth)
    except metrics.UndefinedCorrelationError:
        return float("nan")


def _check_data(train, val):
    if train is None or len(train) == 0:
        raise DataError("training set is empty")
    if val is not None and len(val) == 0:
        raise DataError("validation set is empty")
    if val is not None and (val.K != train.K or val.M != train.M):
        raise DataError(f"dimension mismatch: train K={train.K},M={train.M} vs val K={val.K},M={val.M}")


def fit(model: RedModel, train: Dataset, val: Dataset | None, cfg: TrainConfig):
    """Minibatch Adam on :func:`red_objective`; keeps the best-validation model.

    Returns ``(best_model, log)`` where ``log`` is a list of per-epoch dicts
    with keys :data:`LOG_COLUMNS`. Without a validation set the training set
    is used for model selection.
    """
    _check_data(train, val)
    if train.K != model.K or train.M != model.M:
        raise DataError(f"model expects K={model.K}, M={model.M}; data has K={train.K}, M={train.M}")
    val = train if val is None else val
    seeds = np.random.SeedSequence([cfg.seed, cfg.sure.probe_seed]).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    probe_rng = np.random.default_rng(seeds[1])
    P, std = cfg.sure.probes_per_sample, cfg.sure.probe_std()
    fixed_probes = None
    if model.encoder is not None and not cfg.redraw_probes:
        fixed_probes = std * probe_rng.standard_normal((len(train), P, train.K))

    params = model.params()
    opt = Adam(params, lr=cfg.lr)
    N = len(train)
    best, best_rmse, since_best, log = model.copy(), math.inf, 0, []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(N)
        sums = np.zeros(3)
        for step, start in enumerate(range(0, N, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            Zb = train.Z[idx]
            probes = None
            if model.encoder is not None:
                probes = fixed_probes[idx] if fixed_probes is not None else std * probe_rng.standard_normal((len(idx), P, train.K))
            eps = cfg.sure.epsilon_for(Zb)
            total, mse, mcs, grads = red_objective(model, Zb, train.Y[idx], cfg.lam, cfg.sure, probes, eps)
            if not math.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}: {total}")
            opt.step(params, grads)
            model.touch()
            sums += len(idx) * np.array([total, mse, mcs])
        sums /= N
        pred = model.predict(val.Z)
        vr = metrics.rmse(pred, val.Y)
        ent = float("nan")
        if cfg.log_entropy and len(val) >= 2:
            ent = feature_entropy(model.denoise(val.Z))
        log.append({
            "epoch": epoch,
            "train_loss": float(sums[0]),
            "train_mse": float(sums[1]),
            "train_mcsure": float(sums[2]),
            "val_rmse": vr,
            "val_mae": metrics.mae(pred, val.Y),
            "val_pcc": _safe_pcc(pred, val.Y),
            "head_weight_l2": weight_norm(model),
            "feature_entropy": ent,
        })
        if vr < best_rmse:
            best, best_rmse, since_best = model.copy(), vr, 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    best.sure_config = cfg.sure
    best.optimizer_state = opt.state_dict()
    return best, log


def red_train(train: Dataset, val: Dataset | None, cfg: TrainConfig):
    """Train a fresh RED model (Glorot init seeded by ``cfg.seed``)."""
    _check_data(train, val)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    model = RedModel.init(train.K, train.M, cfg.hidden, rng, cfg.sure,
                          encoder_init_scale=cfg.encoder_init_scale)
    return fit(model, train, val, cfg)


# ---------------------------------------------------------------------------
# checkpoints


def _layer_dict(layer: DenseLayer):
    return {
        "in": layer.in_dim,
        "out": layer.out_dim,
        "weight": layer.weight.ravel().tolist(),
        "bias": layer.bias.tolist(),
    }


def _layer_from(d) -> DenseLayer:
    w = np.array(d["weight"], dtype=np.float64).reshape(d["out"], d["in"])
    return DenseLayer(w, np.array(d["bias"], dtype=np.float64))


def checkpoint_dict(model: RedModel, seed=None, lam=None, denoiser=None):
    enc = model.encoder
    out = {
        "format_version": CHECKPOINT_VERSION,
        "K": model.K,
        "M": model.M,
        "H": enc.layers[0].out_dim if enc is not None and len(enc.layers) > 1 else None,
        "lambda": lam,
        "sigma": model.sure_config.sigma,
        "epsilon": model.sure_config.epsilon,
        "sure": asdict(model.sure_config),
        "seed": seed,
        "encoder": None if enc is None else {
            "activations": list(enc.activations),
            "layers": [_layer_dict(l) for l in enc.layers],
        },
        "head": _layer_dict(model.head),
        "optimizer": model.optimizer_state,
    }
    if denoiser is not None:
        out["denoiser"] = denoiser
    return out


def save_checkpoint(path, model: RedModel, **kw):
    write_json(path, checkpoint_dict(model, **kw))


def model_from_checkpoint(d) -> RedModel:
    if d.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format {d.get('format_version')!r}")
    enc = None
    if d["encoder"] is not None:
        enc = MLP([_layer_from(l) for l in d["encoder"]["layers"]], d["encoder"]["activations"])
    return RedModel(enc, _layer_from(d["head"]), SureConfig(**d["sure"]), d.get("optimizer"))


def load_checkpoint(path):
    """Returns ``(model, raw_dict)``."""
    d = read_json(path)
    return model_from_checkpoint(d), d


def with_lambda(cfg: TrainConfig, lam: float) -> TrainConfig:
    return replace(cfg, lam=lam)
