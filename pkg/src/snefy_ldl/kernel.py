"""Closed-form simplex integration of the paired hidden-unit kernel.

For exponential activations on log-label statistics, the integral of the
product of two hidden units over the simplex is a Dirichlet integral: a ratio
of gamma functions in the paired label weights times an exponential factor in
the feature-side projections.  Everything here works in the log domain via
``gammaln``; exponentiation happens only behind a shared, cancellable offset.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import (
    BoundaryWarning,
    InvalidDistributionError,
    KernelDomainError,
    NumericError,
    SnefyModel,
)

# Paired weights within this distance above the convergence boundary are legal
# but numerically delicate (gammaln diverges at the boundary).
BOUNDARY_TOL = 1e-8

# Largest |log entry| representable comfortably in float64 after exp().
_SAFE_LOG = 600.0


def _check_pair_domain(alpha: np.ndarray) -> None:
    """alpha holds 1 + w1il + w1jl terms; all must be strictly positive."""
    if np.any(alpha <= 0):
        idx = tuple(int(k) for k in np.argwhere(alpha <= 0)[0])
        raise KernelDomainError(
            f"paired label weight at index {idx} gives 1 + w_i + w_j = "
            f"{alpha[idx]:.6g} <= 0; the simplex integral diverges"
        )
    if np.any(alpha <= BOUNDARY_TOL):
        warnings.warn(
            "paired label weights within 1e-8 of the convergence boundary; "
            "kernel values may lose precision",
            BoundaryWarning,
            stacklevel=3,
        )


def log_kernel_entry(w1i, w1j, proj_i: float, proj_j: float) -> float:
    """Log of one kernel entry for hidden rows i and j.

    ``proj_i``/``proj_j`` are the precomputed feature-side projections
    (feature weights dotted with the mapped features, plus bias).  The
    simplex-integral part is sum_l lgamma(1 + w1il + w1jl) minus
    lgamma(L + sum_l (w1il + w1jl)).
    """
    w1i = np.asarray(w1i, dtype=np.float64)
    w1j = np.asarray(w1j, dtype=np.float64)
    if w1i.shape != w1j.shape or w1i.ndim != 1:
        raise KernelDomainError("row weights must be 1-D vectors of equal length")
    # parenthesized pair sum keeps the formula bitwise symmetric in (i, j)
    alpha = 1.0 + (w1i + w1j)
    _check_pair_domain(alpha)
    return float((proj_i + proj_j) + gammaln(alpha).sum() - gammaln(alpha.sum()))


def log_dirichlet_integral(label_weights: np.ndarray) -> np.ndarray:
    """(n, n) log matrix of the x-independent simplex integrals.

    Entry (i, j) is log of the multivariate beta function evaluated at
    1 + w1i + w1j.  Shared across all samples of a batch.
    """
    w1 = np.asarray(label_weights, dtype=np.float64)
    alpha = 1.0 + (w1[:, None, :] + w1[None, :, :])  # (n, n, L), bitwise symmetric
    _check_pair_domain(alpha)
    return gammaln(alpha).sum(axis=2) - gammaln(alpha.sum(axis=2))


def projections(model: SnefyModel, x) -> np.ndarray:
    """Feature-side projection of each hidden row: W2 t2(x) + b.

    Accepts a single feature vector (returns (n,)) or an (N, d) batch
    (returns (N, n)).
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("feature vector contains non-finite entries")
    t2 = model.feature_map.apply(x)
    if not np.all(np.isfinite(t2)):
        raise NumericError("feature map produced non-finite output")
    return t2 @ model.feature_weights.T + model.bias


@dataclass(frozen=True)
class KernelMatrix:
    """The n x n normalizer matrix, optionally held against a log offset.

    The represented matrix is ``entries * exp(log_scale)``; ``log_scale`` is
    zero whenever the true values fit float64.  All downstream uses are
    ratios, so the offset cancels.
    """

    entries: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise KernelDomainError("kernel matrix must be square")
        if not np.all(np.isfinite(e)) or np.any(e <= 0):
            raise NumericError("kernel entries must be finite and strictly positive")
        scale = np.abs(e).max()
        if np.abs(e - e.T).max() > 1e-10 * scale:
            raise NumericError("kernel matrix is not symmetric")
        object.__setattr__(self, "entries", e)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def dense(self) -> np.ndarray:
        """Materialize the plain matrix (may overflow for extreme models)."""
        return self.entries * np.exp(self.log_scale)

    def min_eigenvalue_ratio(self) -> float:
        """Smallest eigenvalue over largest; scale-free PSD diagnostic."""
        eig = np.linalg.eigvalsh(self.entries)
        return float(eig[0] / eig[-1])


def log_kernel_matrix(model: SnefyModel, x) -> np.ndarray:
    """(n, n) matrix of log kernel entries for one sample."""
    p = projections(model, x)
    return log_dirichlet_integral(model.label_weights) + (p[:, None] + p[None, :])


def kernel_matrix(model: SnefyModel, x) -> KernelMatrix:
    """Elementwise simplex integral of the paired hidden-unit products."""
    model.validate()
    logk = log_kernel_matrix(model, x)
    peak = float(np.abs(logk).max())
    scale = float(logk.max()) if peak > _SAFE_LOG else 0.0
    return KernelMatrix(entries=np.exp(logk - scale), log_scale=scale)


def hidden_log_activations(model: SnefyModel, labels, x) -> np.ndarray:
    """Pre-activation of each hidden unit: W1 log(l) + W2 t2(x) + b.

    ``labels`` may be a single simplex vector or an (N, L) batch paired with
    an (N, d) feature batch (or one shared feature vector).
    """
    lab = np.asarray(labels, dtype=np.float64)
    if np.any(lab <= 0):
        raise InvalidDistributionError(
            "label distribution must be strictly interior (floor-normalize first)"
        )
    return np.log(lab) @ model.label_weights.T + projections(model, x)


def log_squared_norm_from_z(readout: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Stable log ||V exp(z)||^2 along the last axis; -inf when the norm is 0."""
    z = np.atleast_2d(z)
    zm = z.max(axis=1, keepdims=True)
    g = np.exp(z - zm) @ readout.T
    sq = np.einsum("ij,ij->i", g, g)
    with np.errstate(divide="ignore"):
        out = 2.0 * zm[:, 0] + np.log(sq)
    return out


def unnormalized_squared_norm(model: SnefyModel, label_distribution, x) -> float:
    """Squared 2-norm of the network output at (label_distribution, x).

    Equals the trace pairing of the readout Gram matrix with the pointwise
    kernel; this is the conditional density's numerator before
    normalization.
    """
    z = hidden_log_activations(model, label_distribution, x)
    logval = log_squared_norm_from_z(model.readout, z)[0]
    return float(np.exp(logval))
