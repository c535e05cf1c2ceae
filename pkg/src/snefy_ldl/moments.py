"""Closed-form conditional mean, variance, and covariance of label ratios.

Each moment is a trace pairing of the normalizer matrix against a weight
matrix built from paired label weights: flat-Dirichlet moment ratios per pair
of hidden rows.  Chebyshev-style confidence intervals come straight from the
first two moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidLevelError, ModelDegenerateError, NumericError, SnefyModel
from .kernel import log_kernel_matrix

# Variance this far below zero is floating-point noise and clamps to 0;
# anything lower indicates a broken kernel or moment path.
VARIANCE_CLAMP = 1e-10


def _pair_sums(label_weights: np.ndarray):
    w1 = np.asarray(label_weights, dtype=np.float64)
    # parenthesized pair sum keeps every moment matrix bitwise symmetric
    a = 1.0 + (w1[:, None, :] + w1[None, :, :])  # (n, n, L): per-pair Dirichlet parameters
    a0 = a.sum(axis=2)  # (n, n): L + sum of paired weights
    return a, a0


def first_moment_matrix(label_weights: np.ndarray, r: int) -> np.ndarray:
    """(n, n) multiplier whose trace pairing gives E[l_r | x]."""
    a, a0 = _pair_sums(label_weights)
    return a[:, :, r] / a0


def second_moment_matrix(label_weights: np.ndarray, r: int) -> np.ndarray:
    """(n, n) multiplier for E[l_r^2 | x]."""
    a, a0 = _pair_sums(label_weights)
    return a[:, :, r] * (a[:, :, r] + 1.0) / (a0 * (a0 + 1.0))


def cross_moment_matrix(label_weights: np.ndarray, r: int, s: int) -> np.ndarray:
    """(n, n) multiplier for E[l_r * l_s | x], r != s."""
    if r == s:
        raise ValueError("cross moments need two distinct labels")
    a, a0 = _pair_sums(label_weights)
    return a[:, :, r] * a[:, :, s] / (a0 * (a0 + 1.0))


def _trace_weights(model: SnefyModel, x) -> np.ndarray:
    """(n, n) normalized pairing weights: Gram(readout) * kernel / trace."""
    gram = model.readout.T @ model.readout
    logk = log_kernel_matrix(model, x)
    t = gram * np.exp(logk - logk.max())
    total = t.sum()
    if total <= 0 or not np.isfinite(total):
        raise ModelDegenerateError("normalizer trace is zero or non-finite")
    return t / total


def _trace_weights_batch(model: SnefyModel, X: np.ndarray) -> np.ndarray:
    from .kernel import log_dirichlet_integral, projections

    gram = model.readout.T @ model.readout
    p = projections(model, X)
    logk = log_dirichlet_integral(model.label_weights)[None, :, :] + (p[:, :, None] + p[:, None, :])
    t = gram[None, :, :] * np.exp(logk - logk.max(axis=(1, 2))[:, None, None])
    totals = t.sum(axis=(1, 2))
    if np.any(totals <= 0) or not np.all(np.isfinite(totals)):
        raise ModelDegenerateError("normalizer trace is zero or non-finite")
    return t / totals[:, None, None]


def conditional_mean(model: SnefyModel, x) -> np.ndarray:
    """E[l | x]: length-L vector summing to 1."""
    t = _trace_weights(model, x)
    a, a0 = _pair_sums(model.label_weights)
    return np.einsum("ij,ijr->r", t / a0, a)


def conditional_second_moments(model: SnefyModel, x) -> tuple[np.ndarray, np.ndarray]:
    """(E[l_r^2 | x] per label, E[l_r l_s | x] as an L x L matrix).

    The off-diagonal of the second output holds cross moments; its diagonal
    holds the squared moments, so the matrix is the full E[l l^T | x].
    """
    t = _trace_weights(model, x)
    a, a0 = _pair_sums(model.label_weights)
    tw = t / (a0 * (a0 + 1.0))
    second = np.einsum("ij,ijr,ijs->rs", tw, a, a)
    second = 0.5 * (second + second.T)  # exact symmetry despite einsum ordering
    # E[l_r^2] uses a_r (a_r + 1), not a_r^2, so correct the diagonal.
    diag = np.einsum("ij,ijr->r", tw, a * (a + 1.0))
    np.fill_diagonal(second, diag)
    return diag, second


def conditional_variance(model: SnefyModel, x) -> np.ndarray:
    """Var[l_r | x] per label, clamped at tiny negative float noise."""
    mean = conditional_mean(model, x)
    m2, _ = conditional_second_moments(model, x)
    return _clamp_variance(m2 - mean**2)


def conditional_covariance(model: SnefyModel, x) -> np.ndarray:
    """Cov[l_r, l_s | x]: symmetric L x L matrix with zero row sums."""
    mean = conditional_mean(model, x)
    _, second = conditional_second_moments(model, x)
    cov = second - np.outer(mean, mean)
    np.fill_diagonal(cov, _clamp_variance(np.diag(cov).copy()))
    return cov


def _clamp_variance(var: np.ndarray) -> np.ndarray:
    var = np.atleast_1d(np.asarray(var, dtype=np.float64))
    if np.any(var < -VARIANCE_CLAMP):
        raise NumericError(
            f"variance {var.min():.3e} below the noise floor; moment path is broken"
        )
    return np.maximum(var, 0.0)


@dataclass(frozen=True)
class MomentReport:
    """Mean, variance, and covariance of the label ratios at one sample."""

    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray


def moment_report(model: SnefyModel, x) -> MomentReport:
    mean = conditional_mean(model, x)
    cov = conditional_covariance(model, x)
    return MomentReport(mean=mean, variance=np.diag(cov).copy(), covariance=cov)


def conditional_moments_batch(model: SnefyModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Means and variances for every row of an (N, d) feature matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    t = _trace_weights_batch(model, X)
    a, a0 = _pair_sums(model.label_weights)
    means = np.einsum("kij,ijr->kr", t / a0, a)
    m2 = np.einsum("kij,ijr->kr", t / (a0 * (a0 + 1.0)), a * (a + 1.0))
    variances = np.maximum(m2 - means**2, 0.0)
    if np.any(m2 - means**2 < -VARIANCE_CLAMP):
        raise NumericError("variance below the noise floor; moment path is broken")
    return means, variances


def k_from_level(level: float) -> float:
    """Chebyshev multiplier for a target coverage level: k = 1/sqrt(1-level)."""
    if not 0.0 < level < 1.0:
        raise InvalidLevelError(f"confidence level must lie in (0, 1), got {level}")
    return 1.0 / np.sqrt(1.0 - level)


def chebyshev_interval(mean: float, variance: float, k: float) -> tuple[float, float]:
    """Distribution-free interval mean +/- k * sqrt(variance), cut to [0, 1].

    Label ratios live in [0, 1], so the cut never loses coverage; the
    conformal calibration score uses the uncut half-width.
    """
    if k <= 1.0:
        raise InvalidLevelError(f"Chebyshev multiplier k must exceed 1, got {k}")
    if variance < 0:
        raise NumericError(f"negative variance {variance} passed to interval builder")
    half = k * float(np.sqrt(variance))
    return (max(mean - half, 0.0), min(mean + half, 1.0))
