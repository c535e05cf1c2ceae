"""Conditional log-density of a label distribution given features.

The density with respect to Lebesgue measure on the simplex is the squared
network output divided by the trace pairing of the readout Gram matrix with
the integrated kernel.  Note this is the Lebesgue density, not the density
against the uniform simplex measure; the two differ by a factor (L-1)!.
"""

from __future__ import annotations

import numpy as np

from .core import ModelDegenerateError, SnefyModel, log_uniform_simplex_density, sample_uniform_simplex
from .kernel import (
    hidden_log_activations,
    log_dirichlet_integral,
    log_kernel_matrix,
    log_squared_norm_from_z,
    projections,
)


def log_denominator(model: SnefyModel, x) -> np.ndarray:
    """Log of the normalizer trace for one sample or an (N, d) batch."""
    x = np.asarray(x, dtype=np.float64)
    gram = model.readout.T @ model.readout
    if x.ndim == 1:
        logk = log_kernel_matrix(model, x)[None, :, :]
    else:
        p = projections(model, x)
        logk = log_dirichlet_integral(model.label_weights)[None, :, :] + (p[:, :, None] + p[:, None, :])
    peak = logk.max(axis=(1, 2))
    traces = np.einsum("ij,kij->k", gram, np.exp(logk - peak[:, None, None]))
    if np.any(traces <= 0) or not np.all(np.isfinite(traces)):
        raise ModelDegenerateError("normalizer trace is zero or non-finite")
    out = peak + np.log(traces)
    return out[0] if x.ndim == 1 else out


def log_density_batch(model: SnefyModel, labels, x) -> np.ndarray:
    """Log-densities for an (N, L) batch of label vectors.

    ``x`` is either one shared feature vector (the normalizer is computed
    once) or an (N, d) batch aligned with the labels.
    """
    z = np.atleast_2d(hidden_log_activations(model, labels, x))
    log_num = log_squared_norm_from_z(model.readout, z)
    return log_num - log_denominator(model, x)


def log_density(model: SnefyModel, label_distribution, x) -> float:
    """Log-density of one label vector given one sample.

    Returns -inf if the network output vanishes exactly at this point (a
    zero-probability event for interior labels under valid models).
    """
    return float(log_density_batch(model, np.atleast_2d(label_distribution), x)[0])


def normalization_check(
    model: SnefyModel, x, n_samples: int, rng: np.random.Generator
) -> float:
    """Importance-sampling estimate of the density's total mass (target 1).

    Draws uniformly from the simplex and averages density over proposal
    ratios.  A fitted or random valid model should land near 1; systematic
    deviation signals a broken kernel or density path.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    L = model.n_labels
    draws = sample_uniform_simplex(L, rng, n=int(n_samples))
    lp = log_density_batch(model, draws, x)
    return float(np.mean(np.exp(lp - log_uniform_simplex_density(L))))
