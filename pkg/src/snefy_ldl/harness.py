"""Experiment drivers: prediction metrics, entropy-driven pool selection,
and density-weighted bagging."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import EPS_FLOOR, DimensionError, LdlDataset, SnefyModel, floor_normalize, make_rng
from .density import log_density
from .moments import conditional_moments_batch
from .training import TrainConfig, train, train_maxent_baseline
from .uncertainty import dirichlet_entropy, entropy_estimate, fit_dirichlet_concentration

STRATEGIES = ("snefy-entropy", "dirichlet-entropy", "random", "kmeans")


def worker_count() -> int:
    """Worker cap from SNEFY_THREADS; defaults to single-threaded."""
    try:
        return max(1, int(os.environ.get("SNEFY_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class MetricReport:
    """The six distances/similarities between truth and prediction."""

    cheby: float
    clark: float
    canb: float
    kl: float
    cos: float
    inter: float

    def as_row(self) -> tuple[float, ...]:
        return (self.cheby, self.clark, self.canb, self.kl, self.cos, self.inter)


def ldl_metrics(truth, pred) -> MetricReport:
    """Six-way comparison of one truth/prediction pair.

    KL floors the prediction so a zero predicted mass cannot blow up; zero
    truth entries contribute nothing (0 log 0 = 0).  Ratio terms where both
    vectors are zero count as zero.
    """
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise DimensionError("truth and prediction must be equal-length vectors")
    diff = t - p
    tot = t + p
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(tot > 0, diff / tot, 0.0)
    p_floored = floor_normalize(p, EPS_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_terms = np.where(t > 0, t * (np.log(t) - np.log(p_floored)), 0.0)
    return MetricReport(
        cheby=float(np.max(np.abs(diff))),
        clark=float(np.sqrt(np.sum(ratio**2))),
        canb=float(np.sum(np.abs(ratio))),
        kl=float(np.sum(kl_terms)),
        cos=float(t @ p / (np.linalg.norm(t) * np.linalg.norm(p))),
        inter=float(np.sum(np.minimum(t, p))),
    )


def mean_metrics(truths, preds) -> MetricReport:
    """Per-pair metrics averaged over a test set."""
    rows = [ldl_metrics(t, p).as_row() for t, p in zip(np.asarray(truths), np.asarray(preds))]
    return MetricReport(*np.mean(rows, axis=0))


def entropy_profile(
    model: SnefyModel, features, n_iter: int = 1000, seed: int = 0, workers: int | None = None
) -> np.ndarray:
    """Estimated differential entropy for every pool point.

    Each point draws from its own seed-derived stream, so results are
    independent of the worker count and of scheduling order.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    workers = worker_count() if workers is None else max(1, workers)

    def one(i):
        return entropy_estimate(model, X[i], n_iter=n_iter, rng=make_rng(seed, stream=3000 + i))

    if workers == 1 or X.shape[0] < 2:
        return np.array([one(i) for i in range(X.shape[0])])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(one, range(X.shape[0]))))


def active_select(
    model: SnefyModel, features, n_query: int, n_iter: int = 1000, seed: int = 0
) -> list[int]:
    """Indices of the pool points with the largest estimated entropy,
    descending, ties broken toward the lower index."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[0] < 1:
        raise DimensionError("cannot select from an empty pool")
    if n_query > X.shape[0]:
        raise DimensionError("n_query exceeds the pool size")
    ent = entropy_profile(model, X, n_iter=n_iter, seed=seed)
    order = np.argsort(-ent, kind="stable")
    return [int(i) for i in order[:n_query]]


def _kmeans_select(features: np.ndarray, n_query: int, seed: int, n_iter: int = 20) -> list[int]:
    """Lloyd's algorithm with k = n_query; returns the pool point nearest to
    each centroid, skipping points already taken."""
    rng = make_rng(seed, stream=41)
    X = features
    centers = X[rng.choice(X.shape[0], size=n_query, replace=False)].copy()
    for _ in range(n_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for j in range(n_query):
            members = X[assign == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
    chosen: list[int] = []
    taken = np.zeros(X.shape[0], dtype=bool)
    for j in range(n_query):
        d2 = ((X - centers[j]) ** 2).sum(axis=1)
        d2[taken] = np.inf
        idx = int(d2.argmin())
        chosen.append(idx)
        taken[idx] = True
    return chosen


def _select_queries(
    strategy: str,
    model: SnefyModel,
    labeled: LdlDataset,
    pool_features: np.ndarray,
    n_query: int,
    cfg: TrainConfig,
    n_iter: int,
) -> list[int]:
    if strategy == "snefy-entropy":
        return active_select(model, pool_features, n_query, n_iter=n_iter, seed=cfg.seed)
    if strategy == "dirichlet-entropy":
        maxent = train_maxent_baseline(labeled, cfg)
        tau = fit_dirichlet_concentration(maxent, labeled)
        p = np.atleast_2d(maxent.predict(pool_features))
        ent = np.array([dirichlet_entropy(tau * row) for row in p])
        order = np.argsort(-ent, kind="stable")
        return [int(i) for i in order[:n_query]]
    if strategy == "random":
        rng = make_rng(cfg.seed, stream=42)
        return [int(i) for i in rng.choice(pool_features.shape[0], size=n_query, replace=False)]
    if strategy == "kmeans":
        return _kmeans_select(pool_features, n_query, seed=cfg.seed)
    raise DimensionError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def active_learning_round(
    train_pool: LdlDataset,
    test: LdlDataset,
    initial_size: int = 400,
    n_query: int = 100,
    cfg: TrainConfig = TrainConfig(),
    strategy: str = "snefy-entropy",
    n_iter: int = 1000,
) -> MetricReport:
    """One acquisition round: fit, select, refit, score on held-out data.

    With ``n_query`` zero the initial model is scored directly and no
    selection or retraining happens.
    """
    N = len(train_pool)
    if N < initial_size + n_query:
        raise DimensionError("pool is smaller than initial_size + n_query")
    order = make_rng(cfg.seed, stream=40).permutation(N)
    labeled = train_pool.subset(order[:initial_size])
    pool_idx = order[initial_size:]
    model, _ = train(labeled, cfg, run_grad_check=False)
    if n_query > 0:
        pool_features = train_pool.features[pool_idx]
        picked = _select_queries(strategy, model, labeled, pool_features, n_query, cfg, n_iter)
        augmented = train_pool.subset(np.concatenate([order[:initial_size], pool_idx[picked]]))
        model, _ = train(augmented, cfg, run_grad_check=False)
    preds, _ = conditional_moments_batch(model, test.features)
    return mean_metrics(test.labels, preds)


def combine_weighted(base_preds, log_weights) -> np.ndarray:
    """Convex combination of simplex points with softmax-normalized weights.

    All-(-inf) weights fall back to uniform with a warning, so a degenerate
    density model degrades to plain averaging instead of failing.
    """
    P = np.atleast_2d(np.asarray(base_preds, dtype=np.float64))
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.shape[0] != P.shape[0]:
        raise DimensionError("one log weight per base prediction required")
    peak = lw.max()
    if not np.isfinite(peak):
        warnings.warn(
            "all base predictions have zero density; using uniform weights", RuntimeWarning
        )
        w = np.full(lw.shape[0], 1.0 / lw.shape[0])
    else:
        w = np.exp(lw - peak)
        w /= w.sum()
    return w @ P


def ensemble_predict(base_preds, model: SnefyModel, x, mode: str = "weighted") -> np.ndarray:
    """Aggregate base predictions uniformly or by conditional density.

    Weighted mode scores each base prediction by the model's density at that
    point given x and normalizes; the weights are invariant to rescaling the
    model's readout because the density already is.
    """
    P = np.atleast_2d(np.asarray(base_preds, dtype=np.float64))
    if P.shape[0] < 1:
        raise DimensionError("need at least one base prediction")
    if mode == "average":
        return P.mean(axis=0)
    if mode != "weighted":
        raise DimensionError(f"unknown ensemble mode {mode!r}")
    lw = np.array([log_density(model, pred, x) for pred in P])
    return combine_weighted(P, lw)


def bagging_experiment(
    train_set: LdlDataset,
    test: LdlDataset,
    n_base: int = 25,
    n_sample: int = 50,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[MetricReport, MetricReport]:
    """Bagged max-entropy learners aggregated two ways.

    Trains ``n_base`` point predictors on seeded subsamples plus one density
    model on the full training set, then reports uniform-average and
    density-weighted ensembling on the test set.
    """
    if len(train_set) < n_sample:
        raise DimensionError("training set smaller than the per-learner sample count")
    learners = []
    for i in range(n_base):
        rng = make_rng(cfg.seed, stream=5000 + i)
        idx = rng.choice(len(train_set), size=n_sample, replace=False)
        learners.append(train_maxent_baseline(train_set.subset(idx), cfg))
    model, _ = train(train_set, cfg, run_grad_check=False)

    avg_preds, weighted_preds = [], []
    for x in test.features:
        base = np.stack([ln.predict(x) for ln in learners])
        avg_preds.append(base.mean(axis=0))
        weighted_preds.append(ensemble_predict(base, model, x, mode="weighted"))
    return (
        mean_metrics(test.labels, np.stack(avg_preds)),
        mean_metrics(test.labels, np.stack(weighted_preds)),
    )
