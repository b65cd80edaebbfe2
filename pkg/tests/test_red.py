import numpy as np
import pytest

from red_sure.analysis import weight_norm
from red_sure.data import DataError, Dataset, FeatureVector, SyntheticSpec, generate_synthetic, split
from red_sure.nnkit import MLP, DenseLayer, ShapeError
from red_sure.red import (
    RedModel,
    TrainConfig,
    TrainingError,
    count_params,
    denoise,
    fit,
    load_checkpoint,
    red_objective,
    red_predict,
    red_train,
    save_checkpoint,
)
from red_sure.sure import SureConfig, mse_oracle


def small_data(sigma=1.0, n=400, K=16, latent=4, M=4, seed=0, target_noise=0.1):
    ds = generate_synthetic(SyntheticSpec(n, latent, K, M, sigma, target_noise, seed))
    return split(ds, (0.6, 0.2, 0.2), seed)


def zero_model(K, M, head_bias):
    enc = MLP([DenseLayer.zeros(K, K), DenseLayer.zeros(K, K)], ["relu", "identity"])
    return RedModel(enc, DenseLayer(np.zeros((M, K)), head_bias))


def identity_encoder(K):
    """relu(z) - relu(-z) = z, built from a 2K-wide hidden layer."""
    I = np.eye(K)
    return MLP([DenseLayer(np.vstack([I, -I]), np.zeros(2 * K)), DenseLayer(np.hstack([I, -I]), np.zeros(K))],
               ["relu", "identity"])


class TestObjective:
    def test_lambda_zero_is_regression_term(self, rng):
        model = RedModel.init(6, 3, rng=rng)
        Z, Y = rng.normal(size=(2, 5, 6))[0], rng.normal(size=(5, 3))
        cfg = SureConfig(sigma=1.0)
        t1, mse, _, g1 = red_objective(model, Z, Y, 0.0, cfg, rng.standard_normal((5, 1, 6)))
        t2, _, _, g2 = red_objective(model, Z, Y, 0.0, cfg, rng.standard_normal((5, 1, 6)))
        assert abs(t1 - mse) <= 1e-12 and t1 == t2
        for a, b in zip(g1, g2):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_regression_only_total(self, rng):
        model = RedModel.init(4, 2, rng=rng, with_encoder=False)
        Z, Y = rng.normal(size=(8, 4)), rng.normal(size=(8, 2))
        total, mse, mcs, _ = red_objective(model, Z, Y, 1.0, SureConfig())
        expected = np.mean(np.sum((model.predict(Z) - Y) ** 2, axis=1) / 2)
        assert mcs == 0.0 and total == mse == pytest.approx(expected)


class TestPredict:
    def test_zero_network_gives_head_bias(self):
        bias = np.array([1.5, -2.0, 0.25])
        model = zero_model(5, 3, bias)
        assert np.array_equal(red_predict(model, FeatureVector("a", np.arange(5.0))), bias)
        assert not denoise(model, np.ones(5)).any()

    def test_teacher_initialised(self):
        ds = generate_synthetic(SyntheticSpec(20, 3, 8, 4, 0.0, 0.0, seed=1))
        W = ds.meta["teacher"]
        model = RedModel(identity_encoder(8), DenseLayer(W, np.zeros(4)))
        assert np.max(np.abs(red_predict(model, ds.Z) - ds.Y)) <= 1e-9

    def test_batch_invariance(self, rng):
        model = RedModel.init(6, 2, rng=rng)
        Z = rng.normal(size=(7, 6))
        alone = np.stack([red_predict(model, z) for z in Z])
        assert np.max(np.abs(alone - red_predict(model, Z))) <= 1e-12

    def test_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            red_predict(RedModel.init(6, 2, rng=rng), np.ones(5))


class TestCountParams:
    def test_table_counts(self):
        head_only = RedModel.init(512, 52, with_encoder=False)
        red = RedModel.init(512, 52, hidden=512)
        assert count_params(head_only) == 26_676
        assert count_params(red) == 551_988
        assert count_params(None) == 0

    def test_megabyte_rounding(self):
        # the printed sizes are counts in units of 2^20
        assert round(26_676 / 2**20, 2) == 0.03
        assert round(551_988 / 2**20, 2) == 0.53


class TestTraining:
    def test_deterministic_logs(self):
        tr, va, _ = small_data()
        cfg = TrainConfig(epochs=4, seed=2)
        m1, log1 = red_train(tr, va, cfg)
        m2, log2 = red_train(tr, va, cfg)
        assert repr(log1) == repr(log2)
        assert all(np.array_equal(a, b) for a, b in zip(m1.params(), m2.params()))

    def test_log_columns(self):
        tr, va, _ = small_data()
        _, log = red_train(tr, va, TrainConfig(epochs=2))
        assert list(log[0]) == ["epoch", "train_loss", "train_mse", "train_mcsure", "val_rmse",
                                "val_mae", "val_pcc", "head_weight_l2", "feature_entropy"]

    def test_empty_train(self):
        with pytest.raises(DataError):
            red_train(Dataset([], np.zeros((0, 3)), np.zeros((0, 1))), None, TrainConfig(epochs=1))

    def test_dim_mismatch(self):
        tr, va, _ = small_data()
        other, _, _ = small_data(K=8)
        with pytest.raises(DataError):
            red_train(tr, other, TrainConfig(epochs=1))

    def test_non_finite_loss_aborts(self):
        tr, va, _ = small_data()
        model = RedModel.init(tr.K, tr.M, rng=np.random.default_rng(0))
        model.head.weight[:] = 1e300
        with np.errstate(all="ignore"), pytest.raises(TrainingError, match="epoch 1, step 0"):
            fit(model, tr, va, TrainConfig(epochs=1))

    def test_fixed_probes_option(self):
        tr, va, _ = small_data()
        _, log = red_train(tr, va, TrainConfig(epochs=2, redraw_probes=False))
        assert len(log) == 2

    def test_early_stopping(self):
        tr, va, _ = small_data()
        _, log = red_train(tr, va, TrainConfig(epochs=500, patience=2, lr=0.05, log_entropy=False))
        assert len(log) < 500

    def test_sigma_zero_self_reconstruction(self):
        tr, va, te = small_data(sigma=0.0)
        cfg = TrainConfig(lam=1.0, epochs=80, sure=SureConfig(sigma=0.0), log_entropy=False, seed=0)
        model, _ = red_train(tr, va, cfg)
        err = float(np.mean(mse_oracle(model.denoise(te.Z), te.Z_clean)))
        assert err <= 0.05 * float(np.var(te.Z))

    def test_regression_loss_decreases_on_realizable_task(self):
        tr, va, _ = small_data(sigma=0.0, target_noise=0.0)
        cfg = TrainConfig(lam=1.0, epochs=60, patience=60, sure=SureConfig(sigma=0.0), log_entropy=False)
        _, log = red_train(tr, va, cfg)
        mse = [row["train_mse"] for row in log]
        assert all(b <= 1.05 * a for a, b in zip(mse, mse[1:]))
        assert mse[-1] < mse[0] / 10

    def test_head_weight_norm_lower_with_sure(self):
        wins = 0
        for seed in range(5):
            ds = generate_synthetic(SyntheticSpec(800, 8, 64, 52, 1.0, 0.25, seed))
            tr, va, _ = split(ds, (0.625, 0.125, 0.25), seed)
            base = TrainConfig(seed=seed, sure=SureConfig(sigma=1.0), log_entropy=False)
            m1, _ = red_train(tr, va, base)
            m0, _ = red_train(tr, va, TrainConfig(**{**base.to_dict(), "lam": 0.0, "sure": base.sure}))
            wins += weight_norm(m1) < weight_norm(m0)
        assert wins == 5


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        tr, va, te = small_data()
        model, _ = red_train(tr, va, TrainConfig(epochs=2))
        save_checkpoint(tmp_path / "ck.json", model, seed=0, lam=1.0)
        back, raw = load_checkpoint(tmp_path / "ck.json")
        assert np.array_equal(back.predict(te.Z), model.predict(te.Z))
        assert raw["K"] == 16 and raw["H"] == 16 and raw["M"] == 4 and raw["lambda"] == 1.0
        assert raw["optimizer"]["t"] > 0

    def test_regression_round_trip(self, tmp_path):
        model = RedModel.init(3, 2, with_encoder=False)
        save_checkpoint(tmp_path / "ck.json", model)
        back, raw = load_checkpoint(tmp_path / "ck.json")
        assert back.encoder is None and raw["H"] is None
        assert np.array_equal(back.head.weight, model.head.weight)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "ck.json"
        p.write_text('{"format_version": 99}')
        with pytest.raises(ValueError, match="format"):
            load_checkpoint(p)


def test_config_validation():
    from red_sure.data import ConfigError
    for kw in ({"lam": -1.0}, {"epochs": 0}, {"lr": 0.0}, {"batch_size": 0}, {"hidden": 0}):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)
    cfg = TrainConfig(lam=0.5, sure=SureConfig(sigma=2.0))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
