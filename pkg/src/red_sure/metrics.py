"""RMSE / MAE / Pearson correlation and tag-restricted reports."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class UndefinedCorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    pcc: float
    n_samples: int
    subgroup: str | None = None

    def to_dict(self):
        return asdict(self)


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if pred.size == 0:
        raise ValueError("need at least one point")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def _pearson(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined: zero variance")
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def pcc(pred, truth, mode: str = "pooled") -> float:
    """Pearson correlation.

    ``pooled`` correlates all N*M (sample, point) pairs at once;
    ``per-sample`` averages the row-wise correlations of 2-D inputs.
    """
    pred, truth = _pair(pred, truth)
    if mode == "pooled":
        return _pearson(pred.ravel(), truth.ravel())
    if mode == "per-sample":
        rows_p = np.atleast_2d(pred)
        rows_t = np.atleast_2d(truth)
        return float(np.mean([_pearson(p, t) for p, t in zip(rows_p, rows_t)]))
    raise ValueError(f"unknown pcc mode {mode!r}")


def report(pred, truth, subgroup=None, pcc_mode="pooled") -> MetricsReport:
    pred, truth = _pair(pred, truth)
    return MetricsReport(
        rmse(pred, truth),
        mae(pred, truth),
        pcc(pred, truth, pcc_mode),
        int(np.atleast_2d(pred).shape[0]),
        subgroup,
    )


def subgroup_report(pred, truth, tags, tag_filter, pcc_mode="pooled") -> MetricsReport:
    """Metrics over the rows whose tag set contains ``tag_filter``."""
    pred, truth = _pair(pred, truth)
    keep = np.array([tag_filter in t for t in tags], dtype=bool)
    if len(keep) != np.atleast_2d(pred).shape[0]:
        raise ValueError("one tag set per sample required")
    if not keep.any():
        raise ValueError(f"no samples carry tag {tag_filter!r}")
    return report(np.atleast_2d(pred)[keep], np.atleast_2d(truth)[keep], tag_filter, pcc_mode)
