"""Differential entropy estimation and split-conformal interval calibration.

Entropy is estimated by importance sampling with the uniform simplex
proposal.  Conformal calibration rescales Chebyshev-style intervals by a
finite-sample quantile of held-out scores; the Dirichlet baseline runs the
identical pipeline with moments from a Dirichlet centered on a point
prediction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .core import (
    InvalidLevelError,
    LdlDataset,
    SnefyModel,
    log_uniform_simplex_density,
    make_rng,
    sample_uniform_simplex,
)
from .density import log_density_batch
from .moments import conditional_moments_batch, k_from_level
from .training import MaxEntModel


def entropy_estimate(
    model: SnefyModel, x, n_iter: int = 1000, rng: np.random.Generator | None = None
) -> float:
    """Importance-sampled differential entropy of the conditional density.

    Averages -(p/q) log p over uniform simplex draws with proposal density
    q = (L-1)!.  For a constant density the weights are exactly p/q = 1 and
    the estimator has zero sampling variance.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    rng = make_rng(0) if rng is None else rng
    L = model.n_labels
    draws = sample_uniform_simplex(L, rng, n=int(n_iter))
    lp = log_density_batch(model, draws, x)
    ratio = np.exp(lp - log_uniform_simplex_density(L))
    terms = np.where(ratio > 0, ratio * lp, 0.0)
    return float(-np.mean(terms))


def dirichlet_entropy(alpha) -> float:
    """Closed-form differential entropy of a Dirichlet distribution."""
    a = np.asarray(alpha, dtype=np.float64)
    if np.any(a <= 0):
        raise ValueError("Dirichlet parameters must be positive")
    a0 = a.sum()
    log_beta = gammaln(a).sum() - gammaln(a0)
    return float(log_beta + (a0 - a.size) * digamma(a0) - ((a - 1.0) * digamma(a)).sum())


@dataclass(frozen=True)
class ConformalCalibrator:
    """Per-label conformal quantiles at a fixed confidence level."""

    level: float
    k: float
    quantiles: np.ndarray  # (L,), +inf marks a too-small calibration set

    def __post_init__(self):
        if not 0.0 < self.level < 1.0 or self.k <= 1.0:
            raise InvalidLevelError("need level in (0,1) and k > 1")
        q = np.asarray(self.quantiles, dtype=np.float64)
        if np.any(q < 0):
            raise InvalidLevelError("conformal quantiles cannot be negative")
        object.__setattr__(self, "quantiles", q)


def _predict_moments(predictor, X) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(predictor, SnefyModel):
        return conditional_moments_batch(predictor, X)
    return predictor.moments(X)


def score_matrix(means, variances, truths, k: float) -> np.ndarray:
    """|truth - mean| / (k sqrt(var)) per sample and label.

    Zero variance scores 0 when the truth matches the mean exactly and +inf
    otherwise; infinities are legitimate calibration scores, not errors.
    """
    if k <= 1.0:
        raise InvalidLevelError(f"score scaling needs k > 1, got {k}")
    resid = np.abs(np.asarray(truths, dtype=np.float64) - means)
    width = k * np.sqrt(variances)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = resid / width
    return np.where(width > 0, s, np.where(resid == 0, 0.0, np.inf))


def calibration_scores(predictor, calib: LdlDataset, k: float) -> np.ndarray:
    """(N_cal, L) matrix of conformal scores for a fitted predictor."""
    means, variances = _predict_moments(predictor, calib.features)
    return score_matrix(means, variances, calib.labels, k)


def conformal_quantile(scores, level: float) -> float:
    """The ceil(level * (N+1))-th smallest score, or +inf when that index
    exceeds N (the standard small-calibration-set sentinel)."""
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size < 1:
        raise InvalidLevelError("cannot take a quantile of an empty score list")
    if not 0.0 < level < 1.0:
        raise InvalidLevelError(f"level must lie in (0, 1), got {level}")
    # the 1e-9 guard absorbs float fuzz in level * (N+1) (e.g. 0.9 * 100)
    rank = int(np.ceil(level * (s.size + 1) - 1e-9))
    if rank > s.size:
        return float("inf")
    return float(s[rank - 1])


def fit_conformal(predictor, calib: LdlDataset, level: float) -> ConformalCalibrator:
    """Calibrate per-label quantiles on held-out data."""
    k = k_from_level(level)
    scores = calibration_scores(predictor, calib, k)
    q = np.array([conformal_quantile(scores[:, r], level) for r in range(scores.shape[1])])
    return ConformalCalibrator(level=level, k=k, quantiles=q)


def _intervals_from_moments(means, variances, cal: ConformalCalibrator) -> np.ndarray:
    half = cal.k * cal.quantiles[None, :] * np.sqrt(variances)
    half = np.where(np.isfinite(half), half, np.inf)
    lo = np.clip(means - half, 0.0, 1.0)
    hi = np.clip(means + half, 0.0, 1.0)
    bad = ~np.isfinite(cal.quantiles)
    lo[:, bad] = 0.0
    hi[:, bad] = 1.0
    return np.stack([lo, hi], axis=-1)


def calibrated_intervals(predictor, X, cal: ConformalCalibrator) -> np.ndarray:
    """(N, L, 2) calibrated intervals, cut to [0, 1]."""
    means, variances = _predict_moments(predictor, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return _intervals_from_moments(means, variances, cal)


def calibrated_interval(predictor, x, r: int, cal: ConformalCalibrator) -> tuple[float, float]:
    """Calibrated interval for one label at one sample."""
    iv = calibrated_intervals(predictor, np.atleast_2d(x), cal)[0, r]
    return (float(iv[0]), float(iv[1]))


def _bin_indices(values: np.ndarray, bin_size: int) -> np.ndarray:
    """Equal-width bins over the observed range; boundary values go to the
    lower bin, and a zero-width range collapses everything into bin 0."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.size, dtype=int)
    pos = (values - lo) / (hi - lo) * bin_size
    return np.clip(np.ceil(pos).astype(int) - 1, 0, bin_size - 1)


def fsc(test: LdlDataset, intervals, bin_size: int, r: int) -> float:
    """Feature-stratified coverage: the minimum per-group coverage rate.

    Groups are equal-width bins of the first feature over its observed test
    range; empty bins are skipped.
    """
    if bin_size < 1:
        raise InvalidLevelError("bin_size must be at least 1")
    iv = np.asarray(intervals, dtype=np.float64)
    if iv.shape[0] != len(test):
        raise InvalidLevelError("intervals must align with the test set")
    truth = test.labels[:, r]
    covered = (truth >= iv[:, r, 0]) & (truth <= iv[:, r, 1])
    bins = _bin_indices(test.features[:, 0], bin_size)
    rates = [covered[bins == g].mean() for g in range(bin_size) if np.any(bins == g)]
    return float(min(rates))


def fsc_table(test: LdlDataset, intervals, bin_sizes) -> list[tuple[str, int, float]]:
    """(label name, bin size, FSC) rows for report emission."""
    rows = []
    for r, name in enumerate(test.label_names):
        for g in bin_sizes:
            rows.append((name, int(g), fsc(test, intervals, int(g), r)))
    return rows


# ---------------------------------------------------------------------------
# Dirichlet baseline: a Dirichlet centered on a point prediction, with one
# global concentration fitted by maximum likelihood.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirichletBaseline:
    """Point predictor plus concentration; moments feed the conformal pipeline."""

    predictor: MaxEntModel
    concentration: float

    def moments(self, X) -> tuple[np.ndarray, np.ndarray]:
        p = np.atleast_2d(self.predictor.predict(X))
        variances = p * (1.0 - p) / (self.concentration + 1.0)
        return p, variances


def _dirichlet_loglik(tau: float, p: np.ndarray, logy: np.ndarray) -> float:
    a = tau * p
    return float((gammaln(tau) - gammaln(a).sum(axis=1) + ((a - 1.0) * logy).sum(axis=1)).sum())


def fit_dirichlet_concentration(
    predictor: MaxEntModel, data: LdlDataset, lo: float = 0.1, hi: float = 1e4
) -> float:
    """Golden-section likelihood maximization of the concentration on log scale.

    Falls back to the label count with a warning if the search degenerates.
    """
    p = np.atleast_2d(predictor.predict(data.features))
    logy = np.log(data.labels)
    a, b = np.log(lo), np.log(hi)
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc = -_dirichlet_loglik(np.exp(c), p, logy)
    fd = -_dirichlet_loglik(np.exp(d), p, logy)
    for _ in range(80):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = -_dirichlet_loglik(np.exp(c), p, logy)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = -_dirichlet_loglik(np.exp(d), p, logy)
    tau = float(np.exp((a + b) / 2.0))
    if not np.isfinite(tau) or not np.isfinite(min(fc, fd)):
        warnings.warn("concentration search failed; falling back to tau = L", RuntimeWarning)
        return float(data.n_labels)
    return tau


def dirichlet_baseline_calibrate(
    point_predictor: MaxEntModel,
    calib: LdlDataset,
    level: float,
    train: LdlDataset | None = None,
) -> tuple[DirichletBaseline, ConformalCalibrator]:
    """Fit the concentration, then run the standard conformal calibration.

    The concentration is fitted on ``train`` when provided, otherwise on the
    calibration set.  Returns the baseline alongside its calibrator so test
    intervals can be built with the same fitted moments.
    """
    fit_on = calib if train is None else train
    tau = fit_dirichlet_concentration(point_predictor, fit_on)
    baseline = DirichletBaseline(predictor=point_predictor, concentration=tau)
    return baseline, fit_conformal(baseline, calib, level)
