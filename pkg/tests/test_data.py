import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from red_sure.data import (
    ConfigError,
    DataError,
    Dataset,
    FeatureVector,
    NoiseModel,
    SyntheticSpec,
    corrupt,
    generate_synthetic,
    load_dataset,
    load_features,
    load_saved_dataset,
    load_targets,
    save_dataset,
    split,
    write_features,
    write_targets,
)


class TestCorrupt:
    def test_zero_noise_is_identity(self, rng):
        z = FeatureVector("a", [1.0, 2.0, 3.0])
        out = corrupt(z, NoiseModel(0.0), rng)
        assert out == z

    def test_moments_on_1000_coordinates(self):
        z = FeatureVector("a", np.zeros(1000))
        out = corrupt(z, NoiseModel(2.0), np.random.default_rng(0)).values
        assert abs(out.mean()) <= 0.2
        assert 3.5 <= out.var() <= 4.5

    def test_same_seed_bit_identical(self):
        z = FeatureVector("a", np.arange(5.0))
        a = corrupt(z, NoiseModel(1.0), np.random.default_rng(7))
        b = corrupt(z, NoiseModel(1.0), np.random.default_rng(7))
        assert a.values.tobytes() == b.values.tobytes()
        assert a.id == "a"

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            FeatureVector("a", [1.0, np.nan])

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigError):
            NoiseModel(-1.0)

    def test_mean_preserving(self):
        z_star = np.array([1.0, -2.0, 0.5])
        sigma = 1.5
        rng = np.random.default_rng(3)
        draws = [corrupt(FeatureVector("x", z_star), NoiseModel(sigma), rng).values for _ in range(10_000)]
        err = np.abs(np.mean(draws, axis=0) - z_star)
        assert np.all(err <= 4 * sigma / np.sqrt(10_000))


class TestSynthetic:
    def test_sigma_zero_clean_equals_noisy(self):
        ds = generate_synthetic(SyntheticSpec(10, 2, 4, 1, 0.0, seed=1))
        assert all(s.feature == s.clean_feature for s in ds)
        assert np.array_equal(ds.Z, ds.Z_clean)

    def test_teacher_reproduces_targets(self):
        ds = generate_synthetic(SyntheticSpec(50, 3, 6, 2, 1.0, 0.0, seed=2))
        y = ds.Z_clean @ ds.meta["teacher"].T
        assert np.max(np.abs(y - ds.Y)) < 1e-9

    def test_lift_rows_unit_norm_and_clean_is_low_rank(self):
        ds = generate_synthetic(SyntheticSpec(100, 3, 10, 1, 0.5, seed=0))
        np.testing.assert_allclose(np.linalg.norm(ds.meta["lift"], axis=1), 1.0)
        assert np.linalg.matrix_rank(ds.Z_clean) == 3

    def test_noise_energy_concentrates(self):
        ds = generate_synthetic(SyntheticSpec(5000, 4, 8, 1, 1.0, seed=3))
        per_sample = np.mean((ds.Z - ds.Z_clean) ** 2, axis=1)
        assert 0.9 <= per_sample.mean() <= 1.1

    def test_deterministic(self):
        spec = SyntheticSpec(20, 2, 5, 3, 0.7, 0.1, seed=9)
        assert generate_synthetic(spec).equals(generate_synthetic(spec))

    def test_latent_larger_than_K(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticSpec(10, 5, 4, 1, 1.0))


class TestCSV:
    def test_load_two_rows(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("id,f0,f1,f2\na,1,2,3\nb,4,5,6\n")
        feats = load_features(p)
        assert [f.id for f in feats] == ["a", "b"]
        assert all(f.values.size == 3 for f in feats)

    def test_ragged_row_names_line(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("id,f0,f1\na,1,2\nb,1,2,3\n")
        with pytest.raises(DataError, match="line 3"):
            load_features(p)

    @pytest.mark.parametrize("body,msg", [
        ("a,1,x\n", "non-numeric"),
        ("a,1,2\na,3,4\n", "duplicate id"),
        ("a,1,inf\n", "non-finite"),
    ])
    def test_bad_cells(self, tmp_path, body, msg):
        p = tmp_path / "f.csv"
        p.write_text("id,f0,f1\n" + body)
        with pytest.raises(DataError, match=msg):
            load_features(p)

    def test_targets_with_tags(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("id,v0,v1,tags\na,1,2,abnormal;ght\nb,3,4,\n")
        targets, tags = load_targets(p, with_tags=True)
        assert targets[1].values.tolist() == [3.0, 4.0]
        assert tags == {"a": frozenset({"abnormal", "ght"}), "b": frozenset()}

    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(12, 2, 4, 3, 0.5, 0.1, seed=4))
        ds.tags[0] = frozenset({"abnormal"})
        save_dataset(ds, tmp_path)
        back = load_saved_dataset(tmp_path)
        assert back.equals(ds)
        np.testing.assert_array_equal(back.meta["teacher"], ds.meta["teacher"])
        assert back.meta["spec"]["seed"] == 4

    def test_write_then_load(self, tmp_path):
        ids = ["p", "q"]
        Z = np.array([[0.1, 1e-17], [-3.25, 7.0]])
        write_features(tmp_path / "f.csv", ids, Z)
        write_targets(tmp_path / "t.csv", ids, np.array([[1.0], [2.0]]))
        ds = load_dataset(tmp_path / "f.csv", tmp_path / "t.csv")
        assert np.array_equal(ds.Z, Z)


class TestSplit:
    @pytest.fixture
    def ds(self):
        return generate_synthetic(SyntheticSpec(100, 2, 3, 1, 1.0, seed=0))

    def test_sizes(self, ds):
        parts = split(ds, (0.8, 0.1, 0.1), seed=0)
        assert [len(p) for p in parts] == [80, 10, 10]

    def test_same_seed_same_membership(self, ds):
        a = split(ds, (0.8, 0.1, 0.1), seed=5)
        b = split(ds, (0.8, 0.1, 0.1), seed=5)
        assert [p.ids for p in a] == [p.ids for p in b]

    def test_different_seeds_differ(self, ds):
        a = split(ds, (0.8, 0.1, 0.1), seed=1)
        b = split(ds, (0.8, 0.1, 0.1), seed=2)
        assert a[0].ids != b[0].ids

    def test_empty(self):
        with pytest.raises(DataError):
            split(Dataset([], np.zeros((0, 2)), np.zeros((0, 1))), (0.5, 0.5), 0)

    def test_bad_fractions(self, ds):
        with pytest.raises(ConfigError):
            split(ds, (0.5, 0.6), 0)

    @settings(max_examples=50, deadline=None)
    @given(
        n=st.integers(1, 60),
        raw=st.lists(st.floats(0.05, 1.0), min_size=1, max_size=4),
        seed=st.integers(0, 10_000),
    )
    def test_partition(self, n, raw, seed):
        fr = np.array(raw) / np.sum(raw)
        fr[-1] = 1.0 - fr[:-1].sum()
        ds = Dataset([f"s{i}" for i in range(n)], np.zeros((n, 1)), np.zeros((n, 1)))
        parts = split(ds, fr, seed)
        ids = [i for p in parts for i in p.ids]
        assert sorted(ids) == sorted(ds.ids)
        assert len(ids) == len(set(ids))
