"""Calibrated confidence intervals for each label's share.

Chebyshev intervals built from the conditional mean and variance are valid
but loose; split-conformal calibration rescales them with held-out scores so
the stated level actually matches observed coverage.  A Dirichlet centered
on a softmax point predictor runs through the identical pipeline as the
baseline, and feature-stratified coverage (FSC) shows which intervals adapt
across the feature range.

Run:  python3 demos/02_conformal_intervals.py
"""

import numpy as np

from snefy_ldl import (
    LdlDataset,
    TrainConfig,
    calibrated_interval,
    calibrated_intervals,
    dirichlet_baseline_calibrate,
    fit_conformal,
    floor_normalize,
    fsc_table,
    make_rng,
    train,
    train_maxent_baseline,
)

rng = make_rng(99)

# Heteroscedastic generator: labels are noisier on the right half of the
# feature range, which is exactly what stratified coverage should expose.
N, L = 1600, 3
X = np.column_stack([rng.uniform(-1, 1, size=N), rng.standard_normal(N)])
concentration = np.where(X[:, 0] > 0, 3.0, 25.0)
center = np.array([0.5, 0.3, 0.2])
Y = np.stack([floor_normalize(rng.dirichlet(c * center)) for c in concentration])
data = LdlDataset(X, Y)

train_set, calib, test = data.split((0.5, 0.25, 0.25), seed=1)
level = 0.9

cfg = TrainConfig(epochs=30, batch_size=64, n=16, m=8, seed=3)
model, _ = train(train_set, cfg, run_grad_check=False)
cal = fit_conformal(model, calib, level)
print("per-label conformal quantiles:", np.array2string(cal.quantiles, precision=3))

print("\nintervals for the first test point (quantile-rescaled, cut to [0,1]):")
for r in range(L):
    lo, hi = calibrated_interval(model, test.features[0], r, cal)
    truth = test.labels[0, r]
    print(f"  label {r}: [{lo:.3f}, {hi:.3f}]  truth {truth:.3f}")

maxent = train_maxent_baseline(train_set, cfg)
baseline, base_cal = dirichlet_baseline_calibrate(maxent, calib, level, train=train_set)

snefy_iv = calibrated_intervals(model, test.features, cal)
base_iv = calibrated_intervals(baseline, test.features, base_cal)
covered = lambda iv: ((test.labels >= iv[..., 0]) & (test.labels <= iv[..., 1])).mean()
print(f"\nmarginal coverage at level {level}: "
      f"model {covered(snefy_iv):.3f}, Dirichlet baseline {covered(base_iv):.3f}")

print("\nFSC (min per-bin coverage; closer to the level = more adaptive):")
print(f"{'label':>6} {'bins':>5} {'model':>8} {'dirichlet':>10}")
for (name, size, ours), (_, _, theirs) in zip(
    fsc_table(test, snefy_iv, (2, 4, 8)), fsc_table(test, base_iv, (2, 4, 8))
):
    print(f"{name:>6} {size:>5} {ours:>8.3f} {theirs:>10.3f}")
