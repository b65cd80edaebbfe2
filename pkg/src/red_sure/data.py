"""Feature/target ingestion, synthetic data with known clean signal, splits."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from red_sure.fileio import atomic_write_text


class DataError(ValueError):
    """Input data failed validation."""


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass(frozen=True)
class FeatureVector:
    id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size < 1:
            raise DataError(f"feature {self.id!r} is empty")
        if not np.all(np.isfinite(v)):
            raise DataError(f"feature {self.id!r} has non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return (
            isinstance(other, FeatureVector)
            and self.id == other.id
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


class VFTarget(FeatureVector):
    """Vectorised visual field, one dB sensitivity per test point."""

    def __eq__(self, other):
        return isinstance(other, VFTarget) and FeatureVector.__eq__(self, other)

    __hash__ = None


@dataclass(frozen=True)
class NoiseModel:
    sigma: float

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"sigma must be finite and >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Sample:
    feature: FeatureVector
    target: VFTarget
    clean_feature: FeatureVector | None = None
    tags: frozenset = frozenset()

    def __post_init__(self):
        if self.feature.id != self.target.id:
            raise DataError(f"feature id {self.feature.id!r} != target id {self.target.id!r}")
        if self.clean_feature is not None and self.clean_feature.values.size != self.feature.values.size:
            raise DataError(f"clean feature of {self.feature.id!r} has a different dimension")
        object.__setattr__(self, "tags", frozenset(self.tags))


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int
    latent_dim: int
    K: int
    M: int
    sigma: float
    target_noise: float = 0.0
    seed: int = 0

    def validate(self):
        for name in ("n_samples", "latent_dim", "K", "M"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.latent_dim > self.K:
            raise ConfigError(f"latent_dim ({self.latent_dim}) must not exceed K ({self.K})")
        if self.sigma < 0 or self.target_noise < 0:
            raise ConfigError("sigma and target_noise must be >= 0")


class Dataset:
    """Column-oriented collection of samples.

    ``Z`` holds (possibly noisy) features ``(N, K)``, ``Y`` targets ``(N, M)``,
    ``Z_clean`` the clean signal when it is known.
    """

    def __init__(self, ids, Z, Y, Z_clean=None, tags=None, meta=None):
        self.ids = [str(i) for i in ids]
        self.Z = np.array(Z, dtype=np.float64, ndmin=2)
        self.Y = np.array(Y, dtype=np.float64, ndmin=2)
        self.Z_clean = None if Z_clean is None else np.array(Z_clean, dtype=np.float64, ndmin=2)
        self.tags = [frozenset(t) for t in tags] if tags is not None else [frozenset()] * len(self.ids)
        self.meta = meta or {}
        n = len(self.ids)
        if self.Z.shape[0] != n or self.Y.shape[0] != n or len(self.tags) != n:
            raise DataError("ids, features, targets and tags must have the same length")
        if self.Z_clean is not None and self.Z_clean.shape != self.Z.shape:
            raise DataError("clean features must match feature shape")
        if len(set(self.ids)) != n:
            raise DataError("duplicate sample ids")
        for name, arr in (("features", self.Z), ("targets", self.Y), ("clean features", self.Z_clean)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contain non-finite values")

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise DataError("no samples")
        clean = None
        if all(s.clean_feature is not None for s in samples):
            clean = [s.clean_feature.values for s in samples]
        return cls(
            [s.feature.id for s in samples],
            [s.feature.values for s in samples],
            [s.target.values for s in samples],
            clean,
            [s.tags for s in samples],
        )

    @classmethod
    def from_vectors(cls, features, targets, tags=None) -> "Dataset":
        """Join features and targets by id, keeping feature order."""
        by_id = {t.id: t for t in targets}
        missing = [f.id for f in features if f.id not in by_id]
        if missing:
            raise DataError(f"no target for feature ids {missing[:5]}")
        tags = tags or {}
        return cls(
            [f.id for f in features],
            [f.values for f in features],
            [by_id[f.id].values for f in features],
            tags=[tags.get(f.id, frozenset()) for f in features],
        )

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> Sample:
        clean = None if self.Z_clean is None else FeatureVector(self.ids[i], self.Z_clean[i])
        return Sample(
            FeatureVector(self.ids[i], self.Z[i]),
            VFTarget(self.ids[i], self.Y[i]),
            clean,
            self.tags[i],
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def K(self) -> int:
        return self.Z.shape[1]

    @property
    def M(self) -> int:
        return self.Y.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return Dataset(
            [self.ids[i] for i in index],
            self.Z[index],
            self.Y[index],
            None if self.Z_clean is None else self.Z_clean[index],
            [self.tags[i] for i in index],
            self.meta,
        )

    def with_features(self, Z) -> "Dataset":
        return Dataset(self.ids, Z, self.Y, self.Z_clean, self.tags, self.meta)

    def equals(self, other) -> bool:
        return (
            self.ids == other.ids
            and np.array_equal(self.Z, other.Z)
            and np.array_equal(self.Y, other.Y)
            and self.tags == other.tags
            and ((self.Z_clean is None and other.Z_clean is None)
                 or (self.Z_clean is not None and other.Z_clean is not None
                     and np.array_equal(self.Z_clean, other.Z_clean)))
        )


def corrupt_array(z_star, sigma: float, rng: np.random.Generator) -> np.ndarray:
    NoiseModel(sigma)
    z_star = np.asarray(z_star, dtype=np.float64)
    if not np.all(np.isfinite(z_star)):
        raise DataError("cannot corrupt non-finite input")
    if sigma == 0:
        return z_star.copy()
    return z_star + rng.normal(0.0, sigma, size=z_star.shape)


def corrupt(z_star: FeatureVector, noise: NoiseModel, rng: np.random.Generator) -> FeatureVector:
    """Add i.i.d. Gaussian noise of std ``noise.sigma`` to every coordinate."""
    return FeatureVector(z_star.id, corrupt_array(z_star.values, noise.sigma, rng))


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Low-rank clean features, linear teacher targets.

    u ~ N(0, I_latent), z* = A u with unit-norm rows of A, y = W* z* + noise,
    z = z* + N(0, sigma^2 I). ``A`` and ``W*`` are kept in ``meta``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lift = rng.normal(size=(spec.K, spec.latent_dim))
    lift /= np.linalg.norm(lift, axis=1, keepdims=True)
    teacher = rng.normal(size=(spec.M, spec.K)) / np.sqrt(spec.K)
    u = rng.normal(size=(spec.n_samples, spec.latent_dim))
    z_star = u @ lift.T
    y = z_star @ teacher.T
    if spec.target_noise > 0:
        y = y + rng.normal(0.0, spec.target_noise, size=y.shape)
    z = corrupt_array(z_star, spec.sigma, rng)
    width = len(str(spec.n_samples - 1))
    ids = [f"s{i:0{width}d}" for i in range(spec.n_samples)]
    meta = {"spec": asdict(spec), "lift": lift, "teacher": teacher}
    return Dataset(ids, z, y, z_star, meta=meta)


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Random partition into len(fractions) parts (train/val/test by default)."""
    if len(dataset) == 0:
        raise DataError("cannot split an empty dataset")
    fractions = tuple(float(f) for f in fractions)
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be positive and sum to 1, got {fractions}")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = [int(round(c * n)) for c in np.cumsum(fractions)[:-1]] + [n]
    parts, start = [], 0
    for stop in bounds:
        parts.append(dataset.subset(np.sort(perm[start:stop])))
        start = stop
    return tuple(parts)


# ---------------------------------------------------------------------------
# CSV files


def _read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "id":
            raise DataError(f"{path}: header must start with 'id'")
        rows = [(reader.line_num, row) for row in reader if row]
    return path, header, rows


def _parse_values(path, line, row_id, cells):
    try:
        vals = np.array([float(c) for c in cells], dtype=np.float64)
    except ValueError:
        raise DataError(f"{path}: line {line} (id {row_id!r}): non-numeric cell") from None
    if not np.all(np.isfinite(vals)):
        raise DataError(f"{path}: line {line} (id {row_id!r}): non-finite value")
    return vals


def _check_columns(path, header, prefix, n):
    expected = [f"{prefix}{j}" for j in range(n)]
    if header != expected:
        raise DataError(f"{path}: expected columns {prefix}0..{prefix}{n - 1} after 'id'")


def load_features(path) -> list:
    path, header, rows = _read_rows(path)
    K = len(header) - 1
    if K < 1:
        raise DataError(f"{path}: no feature columns")
    _check_columns(path, header[1:], "f", K)
    out, seen = [], set()
    for line, row in rows:
        if len(row) != K + 1:
            raise DataError(f"{path}: line {line} has {len(row)} cells, header has {K + 1}")
        if row[0] in seen:
            raise DataError(f"{path}: line {line}: duplicate id {row[0]!r}")
        seen.add(row[0])
        out.append(FeatureVector(row[0], _parse_values(path, line, row[0], row[1:])))
    return out


def load_targets(path, with_tags=False):
    """Read a target file. With ``with_tags`` also return ``{id: frozenset}``."""
    path, header, rows = _read_rows(path)
    has_tags = header[-1] == "tags"
    M = len(header) - 1 - has_tags
    if M < 1:
        raise DataError(f"{path}: no target columns")
    _check_columns(path, header[1 : 1 + M], "v", M)
    out, tags = [], {}
    for line, row in rows:
        if len(row) != len(header):
            raise DataError(f"{path}: line {line} has {len(row)} cells, header has {len(header)}")
        if row[0] in tags:
            raise DataError(f"{path}: line {line}: duplicate id {row[0]!r}")
        out.append(VFTarget(row[0], _parse_values(path, line, row[0], row[1 : 1 + M])))
        tags[row[0]] = frozenset(t for t in row[-1].split(";") if t) if has_tags else frozenset()
    return (out, tags) if with_tags else out


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


def write_features(path, ids, Z):
    Z = np.asarray(Z, dtype=np.float64)
    header = ["id"] + [f"f{j}" for j in range(Z.shape[1])]
    atomic_write_text(path, _csv_text(header, ([i] + [_fmt(v) for v in z] for i, z in zip(ids, Z))))


def write_targets(path, ids, Y, tags=None):
    Y = np.asarray(Y, dtype=np.float64)
    header = ["id"] + [f"v{j}" for j in range(Y.shape[1])]
    if tags is not None:
        header.append("tags")
    rows = []
    for n, (i, y) in enumerate(zip(ids, Y)):
        row = [i] + [_fmt(v) for v in y]
        if tags is not None:
            row.append(";".join(sorted(tags[n])))
        rows.append(row)
    atomic_write_text(path, _csv_text(header, rows))


def load_dataset(features_path, targets_path) -> Dataset:
    feats = load_features(features_path)
    targets, tags = load_targets(targets_path, with_tags=True)
    return Dataset.from_vectors(feats, targets, tags)


def save_dataset(dataset: Dataset, directory):
    """Write ``features.csv``, ``targets.csv`` (+ ``clean_features.csv`` and
    ``metadata.json`` for synthetic data)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_features(d / "features.csv", dataset.ids, dataset.Z)
    write_targets(d / "targets.csv", dataset.ids, dataset.Y, dataset.tags)
    if dataset.Z_clean is not None:
        write_features(d / "clean_features.csv", dataset.ids, dataset.Z_clean)
    if dataset.meta:
        meta = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in dataset.meta.items()}
        if "spec" in meta:
            meta["seed"] = meta["spec"]["seed"]
        atomic_write_text(d / "metadata.json", json.dumps(meta, indent=1) + "\n")


def load_saved_dataset(directory) -> Dataset:
    d = Path(directory)
    ds = load_dataset(d / "features.csv", d / "targets.csv")
    clean = None
    if (d / "clean_features.csv").exists():
        clean = np.array([f.values for f in load_features(d / "clean_features.csv")])
    meta = {}
    if (d / "metadata.json").exists():
        meta = json.loads((d / "metadata.json").read_text())
        for key in ("lift", "teacher"):
            if key in meta:
                meta[key] = np.array(meta[key], dtype=np.float64)
        meta.pop("seed", None)
    return Dataset(ds.ids, ds.Z, ds.Y, clean, ds.tags, meta)
