"""Feature refinement by unsupervised SURE denoising, for regression.

Modules
-------
data          CSV ingestion, synthetic data with known clean features, splits
nnkit         dense layers, ReLU MLPs, manual backprop, Adam, gradient checks
sure          oracle MSE, exact SURE, Monte-Carlo divergence and MC-SURE loss
red           joint encoder + regression head training and inference
baselines     plain regression and mean/median smoothing kernels
metrics       RMSE, MAE, Pearson correlation, subgroup reports
analysis      noise-as-weight-decay checks, feature entropy, weight norms
verification  the Monte-Carlo/oracle suites behind ``red-sure verify``
"""

from red_sure.data import Dataset, SyntheticSpec, generate_synthetic, split
from red_sure.red import RedModel, TrainConfig, count_params, red_predict, red_train
from red_sure.sure import SureConfig

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "RedModel",
    "SureConfig",
    "SyntheticSpec",
    "TrainConfig",
    "count_params",
    "generate_synthetic",
    "red_predict",
    "red_train",
    "split",
]
