"""
How the trade-off weight shapes the model
=========================================

We sweep the weight on the risk term and record what the training curves
would plot: validation/test metrics, the head's weight norm and the entropy
of the denoised test features. The same table is produced by
``red-sure sweep`` as a CSV.
"""

from red_sure import SureConfig, SyntheticSpec, TrainConfig, generate_synthetic, red_train, split
from red_sure.analysis import feature_entropy, weight_norm
from red_sure.metrics import rmse

ds = generate_synthetic(SyntheticSpec(800, 8, 64, 52, 1.0, 0.25, seed=0))
train, val, test = split(ds, (0.625, 0.125, 0.25), seed=0)

print(f"{'lambda':>6}  {'val_rmse':>8}  {'test_rmse':>9}  {'||w||':>7}  {'entropy':>8}")
for lam in (0.0, 0.1, 0.5, 1.0, 2.0):
    cfg = TrainConfig(lam=lam, seed=0, sure=SureConfig(sigma=1.0), log_entropy=False)
    model, _ = red_train(train, val, cfg)
    print(f"{lam:6.1f}  {rmse(model.predict(val.Z), val.Y):8.4f}  {rmse(model.predict(test.Z), test.Y):9.4f}  "
          f"{weight_norm(model):7.3f}  {feature_entropy(model.denoise(test.Z)):8.2f}")

# Without the risk term (lambda=0) the encoder only serves the regression
# loss; with it the denoised features spread out and the head needs a
# smaller weight norm.
