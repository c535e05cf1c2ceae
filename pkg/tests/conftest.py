"""Shared builders: random valid models, Dirichlet-equivalent models, and
synthetic datasets (including rejection-sampled draws from a known model)."""

import dataclasses

import numpy as np
import pytest

from snefy_ldl.core import FeatureMapParams, LdlDataset, SnefyModel, floor_normalize, make_rng, sample_uniform_simplex
from snefy_ldl.density import log_density_batch


def random_model(seed, L=3, n=2, m=None, d=2, d2=None, w1_lo=-0.2, w1_hi=0.8) -> SnefyModel:
    """A random model with label weights drawn well inside the valid region,
    so Monte-Carlo oracles keep finite variance."""
    rng = make_rng(seed, stream=11)
    m = n if m is None else m
    d2 = max(1, n // 2 + 1) if d2 is None else d2
    return SnefyModel(
        readout=rng.standard_normal((m, n)),
        label_weights=rng.uniform(w1_lo, w1_hi, size=(n, L)),
        feature_weights=0.5 * rng.standard_normal((n, d2)),
        bias=0.3 * rng.standard_normal(n),
        feature_map=FeatureMapParams(
            rng.standard_normal((d2, d)), 0.1 * rng.standard_normal(d2)
        ),
    )


def uniform_model(L, n=1, d=1, readout=None) -> SnefyModel:
    """Label weights all zero: the conditional density is the constant (L-1)!."""
    readout = np.ones((1, n)) if readout is None else np.asarray(readout, dtype=float)
    return SnefyModel(
        readout=readout,
        label_weights=np.zeros((n, L)),
        feature_weights=np.zeros((n, d)),
        bias=np.zeros(n),
        feature_map=FeatureMapParams(np.zeros((d, d)), np.zeros(d)),
    )


def dirichlet_model(alpha, d=1) -> SnefyModel:
    """Single hidden row whose squared activation is the Dirichlet(alpha) kernel.

    With one row the density is proportional to prod l^(2 w1l), so setting
    w1l = (alpha_l - 1) / 2 reproduces Dirichlet(alpha) exactly.
    """
    alpha = np.asarray(alpha, dtype=float)
    w1 = (alpha - 1.0) / 2.0
    return SnefyModel(
        readout=np.array([[1.0]]),
        label_weights=w1[None, :],
        feature_weights=np.zeros((1, d)),
        bias=np.zeros(1),
        feature_map=FeatureMapParams(np.zeros((d, d)), np.zeros(d)),
    )


def random_dataset(seed, N=16, L=3, d=2, concentration=1.5) -> LdlDataset:
    rng = make_rng(seed, stream=12)
    X = rng.standard_normal((N, d))
    Y = np.stack([floor_normalize(v) for v in rng.dirichlet(np.full(L, concentration), size=N)])
    return LdlDataset(X, Y)


def rejection_sample_labels(model: SnefyModel, X, rng, chunk=512) -> np.ndarray:
    """Draw one label vector per feature row from the model's conditional
    density via uniform-proposal rejection."""
    X = np.atleast_2d(X)
    L = model.n_labels
    out = np.empty((X.shape[0], L))
    for i, x in enumerate(X):
        probe = sample_uniform_simplex(L, rng, n=1024)
        bound = log_density_batch(model, probe, x).max() + 1.0
        while True:
            cand = sample_uniform_simplex(L, rng, n=chunk)
            lp = log_density_batch(model, cand, x)
            accept = np.log(rng.uniform(size=chunk)) < lp - bound
            if accept.any():
                out[i] = cand[np.argmax(accept)]
                break
    return out


def synthetic_snefy_dataset(seed, N, L=3, d=2, n=4) -> tuple[LdlDataset, SnefyModel]:
    """Dataset drawn from a known random model; the generator is returned too."""
    gen_rng = make_rng(seed, stream=13)
    true = random_model(seed + 901, L=L, n=n, d=d, w1_lo=-0.2, w1_hi=1.5)
    X = gen_rng.standard_normal((N, d))
    Y = rejection_sample_labels(true, X, gen_rng)
    Y = np.stack([floor_normalize(y) for y in Y])
    return LdlDataset(X, Y), true


def heteroscedastic_dataset(seed, N, L=3) -> LdlDataset:
    """First feature splits the space into a diffuse-label region (x0 > 0,
    flat Dirichlet) and a concentrated one (x0 <= 0, sharp Dirichlet)."""
    rng = make_rng(seed, stream=14)
    X = np.column_stack([rng.uniform(-1, 1, size=N), rng.standard_normal(N)])
    Y = np.empty((N, L))
    sharp = 60.0 * np.array([0.7, 0.2, 0.1])[:L]
    sharp = sharp / sharp.sum() * 60.0
    for i in range(N):
        alpha = np.ones(L) if X[i, 0] > 0 else sharp
        Y[i] = floor_normalize(rng.dirichlet(alpha))
    return LdlDataset(X, Y)


@pytest.fixture
def rng():
    return make_rng(0)
