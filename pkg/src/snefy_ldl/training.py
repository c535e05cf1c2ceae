"""Maximum-likelihood fitting of the conditional simplex density.

Gradients are derived in closed form (digamma terms for the gamma-ratio
kernel, softmax-style terms for the squared network output) rather than via
an autodiff engine: the computation graph is small and fixed, and the
finite-difference oracle in the test suite keeps it auditable.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import digamma

from .core import (
    MIN_LABEL_WEIGHT,
    DimensionError,
    DivergenceError,
    FeatureMapParams,
    LdlDataset,
    NumericError,
    SnefyModel,
    make_rng,
)
from .density import log_density_batch
from .kernel import log_dirichlet_integral

MODEL_FORMAT = "snefy-ldl-model"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; dims (n, m, d2) size the model being fitted."""

    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" or "sgd"
    seed: int = 0
    eps_clip: float = 1e-3
    n: int = 64
    m: int = 32
    d2: int | None = None  # defaults to n

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise DimensionError("epochs and batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise DimensionError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise DimensionError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    """Per-epoch mean NLL, endpoints, and the pre-training gradient audit."""

    epoch_nll: list[float] = field(default_factory=list)
    initial_nll: float = float("nan")
    final_nll: float = float("nan")
    grad_check_max_rel_error: float = float("nan")


@dataclass(frozen=True)
class ModelGradient:
    """Gradient arrays mirroring the model's parameter fields."""

    readout: np.ndarray
    label_weights: np.ndarray
    feature_weights: np.ndarray
    bias: np.ndarray
    feature_map_weight: np.ndarray
    feature_map_bias: np.ndarray


_FIELDS = (
    "readout",
    "label_weights",
    "feature_weights",
    "bias",
    "feature_map_weight",
    "feature_map_bias",
)


def _param_shapes(dims) -> list[tuple[str, tuple[int, ...]]]:
    d, d2, n, m, L = dims
    return [
        ("readout", (m, n)),
        ("label_weights", (n, L)),
        ("feature_weights", (n, d2)),
        ("bias", (n,)),
        ("feature_map_weight", (d2, d)),
        ("feature_map_bias", (d2,)),
    ]


def _model_arrays(model: SnefyModel) -> dict[str, np.ndarray]:
    return {
        "readout": model.readout,
        "label_weights": model.label_weights,
        "feature_weights": model.feature_weights,
        "bias": model.bias,
        "feature_map_weight": model.feature_map.weight,
        "feature_map_bias": model.feature_map.bias,
    }


def pack_parameters(model: SnefyModel) -> np.ndarray:
    arrs = _model_arrays(model)
    return np.concatenate([arrs[name].ravel() for name in _FIELDS])


def unpack_parameters(vec: np.ndarray, dims) -> SnefyModel:
    out, offset = {}, 0
    for name, shape in _param_shapes(dims):
        size = int(np.prod(shape))
        out[name] = vec[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != vec.size:
        raise DimensionError("parameter vector length does not match dims")
    return SnefyModel(
        readout=out["readout"],
        label_weights=out["label_weights"],
        feature_weights=out["feature_weights"],
        bias=out["bias"],
        feature_map=FeatureMapParams(out["feature_map_weight"], out["feature_map_bias"]),
    )


def pack_gradient(grad: ModelGradient) -> np.ndarray:
    return np.concatenate([np.asarray(getattr(grad, name)).ravel() for name in _FIELDS])


def init_model(
    d: int, L: int, n: int = 64, m: int = 32, d2: int | None = None, seed: int = 0
) -> SnefyModel:
    """Random starting point with the label weights safely above the bound.

    Readout, feature-side, and feature-map entries are N(0, 0.1^2); label
    weights are Uniform(0, 0.1) so the constraint holds at init with margin.
    """
    d2 = n if d2 is None else d2
    rng = make_rng(seed, stream=7)
    return SnefyModel(
        readout=0.1 * rng.standard_normal((m, n)),
        label_weights=rng.uniform(0.0, 0.1, size=(n, L)),
        feature_weights=0.1 * rng.standard_normal((n, d2)),
        bias=0.1 * rng.standard_normal(n),
        feature_map=FeatureMapParams(
            0.1 * rng.standard_normal((d2, d)), 0.1 * rng.standard_normal(d2)
        ),
    )


def nll(model: SnefyModel, batch: LdlDataset) -> float:
    """Mean negative log conditional density over the batch.

    A label vector at which the network output vanishes contributes an
    infinite penalty, so the result is +inf rather than an error.
    """
    if len(batch) < 1:
        raise DimensionError("batch must be nonempty")
    lp = log_density_batch(model, batch.labels, batch.features)
    if np.any(np.isneginf(lp)):
        return float("inf")
    return float(-np.mean(lp))


def _forward_backward(model: SnefyModel, X: np.ndarray, Y: np.ndarray):
    """Mean NLL over the batch and its gradient w.r.t. every parameter."""
    B = X.shape[0]
    V, W1, W2, b = model.readout, model.label_weights, model.feature_weights, model.bias
    A, c = model.feature_map.weight, model.feature_map.bias
    n, L = W1.shape

    U = np.log(Y)  # (B, L)
    pre = X @ A.T + c  # (B, D2)
    mask = pre > 0
    T2 = np.where(mask, pre, 0.0)
    P = T2 @ W2.T + b  # (B, n)
    Z = U @ W1.T + P  # (B, n)

    # Squared-output side, all ratios scale-free in exp(z - zmax).
    zm = Z.max(axis=1, keepdims=True)
    S = np.exp(Z - zm)  # (B, n)
    G = S @ V.T  # (B, m)
    sq = np.einsum("km,km->k", G, G)
    if np.any(sq <= 0):
        raise NumericError("squared network output vanished; gradient undefined (readout)")
    log_num = 2.0 * zm[:, 0] + np.log(sq)
    alpha = 2.0 * S * (G @ V) / sq[:, None]  # d log_num / dZ, (B, n)
    dV_num = 2.0 * (G / sq[:, None]).T @ S  # sum_k d log_num_k / dV

    # Normalizer side: shared gamma-ratio matrix plus per-sample projections.
    gram = V.T @ V
    logB = log_dirichlet_integral(W1)
    logK = logB[None, :, :] + P[:, :, None] + P[:, None, :]
    kappa = logK.max(axis=(1, 2))
    Kt = np.exp(logK - kappa[:, None, None])  # (B, n, n)
    Wk = gram[None, :, :] * Kt
    denom = Wk.sum(axis=(1, 2))
    if np.any(denom <= 0) or not np.all(np.isfinite(denom)):
        raise NumericError("normalizer trace not positive; gradient undefined (readout)")
    log_den = kappa + np.log(denom)
    T = Wk / denom[:, None, None]  # (B, n, n), each sums to 1
    Tbar = T.mean(axis=0)
    dV_den = 2.0 * V @ (Kt / denom[:, None, None]).sum(axis=0)
    R = 2.0 * T.sum(axis=2)  # d log_den / dP, (B, n)

    # Label-weight gradient of the normalizer: digamma of per-pair Dirichlet
    # parameters minus digamma of their total, traced against Tbar.
    aa = 1.0 + (W1[:, None, :] + W1[None, :, :])
    a0 = aa.sum(axis=2)
    dW1_den = 2.0 * (
        np.einsum("ij,ijr->ir", Tbar, digamma(aa)) - ((Tbar * digamma(a0)).sum(axis=1))[:, None]
    )

    dP = R - alpha  # (B, n): normalizer minus squared-output parts
    dT2 = dP @ W2
    dpre = np.where(mask, dT2, 0.0)

    grad = ModelGradient(
        readout=(dV_den - dV_num) / B,
        label_weights=dW1_den - (alpha.T @ U) / B,
        feature_weights=(dP.T @ T2) / B,
        bias=dP.mean(axis=0),
        feature_map_weight=(dpre.T @ X) / B,
        feature_map_bias=dpre.mean(axis=0),
    )
    loss = float(np.mean(log_den - log_num))
    return loss, grad


def grad_nll(model: SnefyModel, batch: LdlDataset) -> ModelGradient:
    """Analytic gradient of the mean NLL w.r.t. all model parameters."""
    if len(batch) < 1:
        raise DimensionError("batch must be nonempty")
    _, grad = _forward_backward(model, batch.features, batch.labels)
    for name in _FIELDS:
        arr = np.asarray(getattr(grad, name))
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient in {name}")
    return grad


def gradient_check(
    model: SnefyModel,
    batch: LdlDataset,
    n_coords: int | None = None,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error of the analytic gradient vs central differences.

    Coordinates with both analytic and numeric values below a noise floor
    tied to the gradient's overall scale are compared absolutely.
    """
    dims = model.dims
    vec = pack_parameters(model)
    analytic = pack_gradient(grad_nll(model, batch))

    if n_coords is None or n_coords >= vec.size:
        coords = np.arange(vec.size)
    else:
        coords = make_rng(seed, stream=31).choice(vec.size, size=n_coords, replace=False)

    def loss_at(v):
        return nll(unpack_parameters(v, dims), batch)

    floor = max(1e-6, 1e-4 * float(np.abs(analytic).max()))
    worst = 0.0
    for idx in coords:
        step = np.zeros_like(vec)
        step[idx] = h
        fd = (loss_at(vec + step) - loss_at(vec - step)) / (2.0 * h)
        a = analytic[idx]
        rel = abs(a - fd) / max(abs(a), abs(fd), floor)
        worst = max(worst, rel)
    return worst


def _optimizer_step(vec, grad, state, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return vec - cfg.learning_rate * grad, state
    m1, m2, t = state
    t += 1
    m1 = 0.9 * m1 + 0.1 * grad
    m2 = 0.999 * m2 + 0.001 * grad * grad
    mhat = m1 / (1.0 - 0.9**t)
    vhat = m2 / (1.0 - 0.999**t)
    return vec - cfg.learning_rate * mhat / (np.sqrt(vhat) + 1e-8), (m1, m2, t)


def _clip_label_weights(model: SnefyModel, eps_clip: float) -> SnefyModel:
    lo = MIN_LABEL_WEIGHT + eps_clip
    if model.label_weights.min() >= lo:
        return model
    return replace(model, label_weights=np.maximum(model.label_weights, lo))


def train(
    dataset: LdlDataset, cfg: TrainConfig = TrainConfig(), run_grad_check: bool = True
) -> tuple[SnefyModel, TrainReport]:
    """Mini-batch maximum-likelihood training with post-step weight clipping.

    The per-epoch sample order is reseeded from the master seed, the last
    incomplete batch is kept, and the label weights are clamped above their
    bound after every update, so a fixed seed reproduces the final model
    bit for bit.
    """
    N = len(dataset)
    model = init_model(
        dataset.n_features, dataset.n_labels, n=cfg.n, m=cfg.m, d2=cfg.d2, seed=cfg.seed
    )
    model = _clip_label_weights(model, cfg.eps_clip)
    report = TrainReport()
    report.initial_nll = nll(model, dataset)
    if run_grad_check:
        probe = dataset.subset(np.arange(min(4, N)))
        report.grad_check_max_rel_error = gradient_check(
            model, probe, n_coords=50, seed=cfg.seed
        )

    dims = model.dims
    vec = pack_parameters(model)
    state = (np.zeros_like(vec), np.zeros_like(vec), 0)
    bad_streak = 0
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, stream=1000 + epoch).permutation(N)
        epoch_loss = 0.0
        for start in range(0, N, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = _forward_backward(
                unpack_parameters(vec, dims), dataset.features[idx], dataset.labels[idx]
            )
            gvec = pack_gradient(grad)
            if not (np.isfinite(loss) and np.all(np.isfinite(gvec))):
                bad_streak += 1
                if bad_streak >= 3:
                    raise DivergenceError(
                        "non-finite loss for 3 consecutive batches; try a smaller learning rate"
                    )
                continue
            bad_streak = 0
            vec, state = _optimizer_step(vec, gvec, state, cfg)
            candidate = _clip_label_weights(unpack_parameters(vec, dims), cfg.eps_clip)
            vec = pack_parameters(candidate)
            epoch_loss += loss * idx.size
        report.epoch_nll.append(epoch_loss / N)

    final = unpack_parameters(vec, dims)
    final.validate(eps_clip=0.0)
    report.final_nll = nll(final, dataset)
    return final, report


# ---------------------------------------------------------------------------
# Serialization: a one-line JSON header followed by raw little-endian float64
# buffers in a fixed field order.  Deterministic bytes, bitwise round trip.
# ---------------------------------------------------------------------------


def save_model(model: SnefyModel, path) -> None:
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "dims": list(model.dims),
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode("ascii"))
    buf.write(b"\n")
    arrs = _model_arrays(model)
    for name in _FIELDS:
        buf.write(np.ascontiguousarray(arrs[name], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> SnefyModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("ascii"))
    if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unrecognized model file header: {header}")
    dims = tuple(int(v) for v in header["dims"])
    body = raw[nl + 1 :]
    out, offset = {}, 0
    for name, shape in _param_shapes(dims):
        nbytes = int(np.prod(shape)) * 8
        out[name] = np.frombuffer(body[offset : offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise ValueError("model file payload length does not match header dims")
    return SnefyModel(
        readout=out["readout"],
        label_weights=out["label_weights"],
        feature_weights=out["feature_weights"],
        bias=out["bias"],
        feature_map=FeatureMapParams(out["feature_map_weight"], out["feature_map_bias"]),
    )


# ---------------------------------------------------------------------------
# Max-entropy point predictor: softmax of a linear map, trained by KL.
# Serves as the centering model for the Dirichlet baseline and as the
# ensemble base learner.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaxEntModel:
    weights: np.ndarray  # (L, d)
    bias: np.ndarray  # (L,)

    def predict(self, X) -> np.ndarray:
        """Softmax label distributions for one vector or an (N, d) batch."""
        X = np.asarray(X, dtype=np.float64)
        logits = X @ self.weights.T + self.bias
        logits = np.atleast_2d(logits)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return p if np.asarray(X).ndim == 2 else p[0]


def maxent_kl_loss(model: MaxEntModel, dataset: LdlDataset) -> float:
    """Mean KL(truth || prediction); zero truth entries contribute nothing."""
    p = model.predict(dataset.features)
    Y = dataset.labels
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(Y > 0, Y * (np.log(Y) - np.log(p)), 0.0)
    return float(terms.sum(axis=1).mean())


def _maxent_grad(weights, bias, X, Y):
    logits = X @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    dlogits = (p - Y) / X.shape[0]
    return dlogits.T @ X, dlogits.sum(axis=0)


def train_maxent_baseline(dataset: LdlDataset, cfg: TrainConfig = TrainConfig()) -> MaxEntModel:
    """Fit the softmax-linear predictor by mini-batch KL minimization."""
    N, d, L = len(dataset), dataset.n_features, dataset.n_labels
    weights, bias = np.zeros((L, d)), np.zeros(L)
    vec = np.concatenate([weights.ravel(), bias])
    state = (np.zeros_like(vec), np.zeros_like(vec), 0)
    bad_streak = 0
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, stream=2000 + epoch).permutation(N)
        for start in range(0, N, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            w = vec[: L * d].reshape(L, d)
            b = vec[L * d :]
            gw, gb = _maxent_grad(w, b, dataset.features[idx], dataset.labels[idx])
            gvec = np.concatenate([gw.ravel(), gb])
            if not np.all(np.isfinite(gvec)):
                bad_streak += 1
                if bad_streak >= 3:
                    raise DivergenceError("non-finite max-entropy gradients; reduce learning rate")
                continue
            bad_streak = 0
            vec, state = _optimizer_step(vec, gvec, state, cfg)
    return MaxEntModel(weights=vec[: L * d].reshape(L, d).copy(), bias=vec[L * d :].copy())
