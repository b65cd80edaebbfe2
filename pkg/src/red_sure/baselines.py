"""Feature-level comparison methods: plain regression and fixed smoothing kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from red_sure.data import ConfigError, Dataset
from red_sure.red import RedModel, TrainConfig, _check_data, fit

KERNELS = ("mean", "median")


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    k: int

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kind!r}")
        if self.k < 1:
            raise ConfigError("kernel window must be >= 1")
        if self.kind == "median" and self.k % 2 == 0:
            raise ConfigError(f"median kernel needs an odd window, got k={self.k}")

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """``"mean:3"`` -> KernelSpec("mean", 3)."""
        kind, _, k = text.partition(":")
        try:
            return cls(kind, int(k))
        except ValueError:
            raise ConfigError(f"bad kernel spec {text!r}; expected kind:k") from None

    def label(self) -> str:
        return f"{self.kind}:{self.k}"


def kernel_denoise(z, spec: KernelSpec):
    """Sliding mean/median along the feature axis with replicate padding.

    Window for coordinate i covers [i - k//2, i + k - 1 - k//2], so even
    windows lean left. Works row-wise on 2-D input.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] < 1:
        raise ConfigError("empty feature vector")
    left = spec.k // 2
    right = spec.k - 1 - left
    pad = [(0, 0)] * (z.ndim - 1) + [(left, right)]
    windows = sliding_window_view(np.pad(z, pad, mode="edge"), spec.k, axis=-1)
    if spec.kind == "mean":
        return windows.mean(axis=-1)
    return np.median(windows, axis=-1)


def regression_train(train: Dataset, val: Dataset | None, cfg: TrainConfig):
    """Linear head on raw features, same optimizer and schedule as RED."""
    _check_data(train, val)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    model = RedModel.init(train.K, train.M, rng=rng, sure_config=cfg.sure, with_encoder=False)
    return fit(model, train, val, cfg)


def kernel_regression_train(train: Dataset, val: Dataset | None, spec: KernelSpec, cfg: TrainConfig):
    """Regression on kernel-smoothed features. Returns ``(model, log)``; the
    model expects already-smoothed inputs."""
    smooth = lambda ds: None if ds is None else ds.with_features(kernel_denoise(ds.Z, spec))
    return regression_train(smooth(train), smooth(val), cfg)
