"""Domain types, simplex arithmetic, and seeded randomness.

Everything downstream works on plain float64 numpy arrays: a label
distribution is a 1-D vector on the probability simplex, a feature vector is
a finite 1-D vector, and a dataset pairs an N x d feature matrix with an
N x L row-stochastic label matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_FLOOR = 1e-6

# Elementwise lower bound on the simplex-side weight matrix; the kernel
# integral diverges at or below -1/2 on paired rows.
MIN_LABEL_WEIGHT = -0.5


class InvalidDistributionError(ValueError):
    """Raised for vectors that cannot be normalized onto the simplex."""


class DimensionError(ValueError):
    """Raised for structurally impossible dimensions (e.g. a 1-point simplex)."""


class KernelDomainError(ValueError):
    """Raised when paired simplex weights leave the kernel's convergence domain."""


class InvalidLevelError(ValueError):
    """Raised for confidence levels or multipliers outside their valid range."""


class ModelDegenerateError(ArithmeticError):
    """Raised when the model's normalizer is zero or non-finite."""


class NumericError(ArithmeticError):
    """Raised on non-finite intermediate values that indicate broken inputs."""


class DivergenceError(RuntimeError):
    """Raised when optimization produces non-finite losses repeatedly."""


class BoundaryWarning(UserWarning):
    """Emitted when weights sit numerically close to a validity boundary."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a counter-based generator fully determined by (seed, stream).

    Separate streams derived from one master seed are statistically
    independent, which lets parallel tasks draw reproducibly regardless of
    scheduling order.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(stream)))))


def floor_normalize(raw, eps_floor: float = EPS_FLOOR) -> np.ndarray:
    """Map a nonnegative vector to an interior point of the simplex.

    The vector is scaled to unit sum, then each entry is lifted by
    ``eps_floor`` and the result renormalized, so every output entry is at
    least ``eps_floor / (1 + L * eps_floor)``.  Inputs that already sum to 1
    and satisfy that floor pass through unchanged (log-transforms of labels
    must stay finite, hence the floor).
    """
    v = np.asarray(raw, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise InvalidDistributionError("expected a 1-D vector with at least one entry")
    if not np.all(np.isfinite(v)):
        raise InvalidDistributionError("distribution entries must be finite")
    if np.any(v < 0):
        raise InvalidDistributionError("distribution entries must be nonnegative")
    total = v.sum()
    if total <= 0:
        raise InvalidDistributionError("all-zero vector cannot be normalized")
    floor = eps_floor / (1.0 + v.size * eps_floor)
    if abs(total - 1.0) <= 1e-12 and v.min() >= floor * (1.0 - 1e-9):
        return v / total
    u = v / total
    out = u + eps_floor
    return out / out.sum()


def is_label_distribution(values, atol: float = 1e-9) -> bool:
    """True for a finite nonnegative vector summing to 1 within ``atol``."""
    v = np.asarray(values, dtype=np.float64)
    return (
        v.ndim == 1
        and v.size >= 1
        and bool(np.all(np.isfinite(v)))
        and bool(np.all(v >= 0))
        and abs(v.sum() - 1.0) <= atol
    )


def sample_uniform_simplex(L: int, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw uniformly from the (L-1)-simplex.

    Uses L independent standard exponentials normalized by their sum, an
    exact flat-Dirichlet sampler.  The proposal density of each draw with
    respect to Lebesgue measure on the simplex is (L-1)!.

    Returns shape (L,) by default or (n, L) when ``n`` is given.
    """
    if L < 2:
        raise DimensionError(f"simplex needs at least 2 coordinates, got L={L}")
    shape = (L,) if n is None else (int(n), L)
    e = rng.standard_exponential(shape)
    return e / e.sum(axis=-1, keepdims=True)


def log_uniform_simplex_density(L: int) -> float:
    """log (L-1)!, the density of the uniform simplex distribution."""
    out = 0.0
    for k in range(2, L):
        out += np.log(k)
    return out


@dataclass(frozen=True)
class FeatureMapParams:
    """One-layer ReLU map from raw features to the model's latent space."""

    weight: np.ndarray  # (D2, d)
    bias: np.ndarray  # (D2,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise DimensionError("feature map weight must be (D2, d) with matching (D2,) bias")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError("feature map parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    def apply(self, x) -> np.ndarray:
        """ReLU(weight @ x + bias); accepts a single vector or an (N, d) batch."""
        x = np.asarray(x, dtype=np.float64)
        pre = x @ self.weight.T + self.bias
        return np.maximum(pre, 0.0)


@dataclass(frozen=True)
class SnefyModel:
    """Parameters of the conditional simplex density.

    ``readout`` is the (m, n) output-layer matrix, ``label_weights`` the
    (n, L) weights on log-label statistics, ``feature_weights`` the (n, D2)
    weights on the feature map output, ``bias`` the (n,) hidden bias.
    """

    readout: np.ndarray
    label_weights: np.ndarray
    feature_weights: np.ndarray
    bias: np.ndarray
    feature_map: FeatureMapParams

    def __post_init__(self):
        for name in ("readout", "label_weights", "feature_weights", "bias"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.bias.shape[0]
        if self.readout.ndim != 2 or self.readout.shape[1] != n:
            raise DimensionError("readout must be (m, n)")
        if self.label_weights.ndim != 2 or self.label_weights.shape[0] != n:
            raise DimensionError("label_weights must be (n, L)")
        if self.feature_weights.ndim != 2 or self.feature_weights.shape[0] != n:
            raise DimensionError("feature_weights must be (n, D2)")
        if self.feature_weights.shape[1] != self.feature_map.weight.shape[0]:
            raise DimensionError("feature_weights and feature_map disagree on D2")

    @property
    def dims(self) -> tuple[int, int, int, int, int]:
        """(d, D2, n, m, L)."""
        d2, d = self.feature_map.weight.shape
        m, n = self.readout.shape
        return (d, d2, n, m, self.label_weights.shape[1])

    @property
    def n_labels(self) -> int:
        return self.label_weights.shape[1]

    @property
    def n_features(self) -> int:
        return self.feature_map.weight.shape[1]

    def validate(self, eps_clip: float = 0.0) -> None:
        """Raise unless all parameters are finite and label weights clear the bound."""
        for name in ("readout", "label_weights", "feature_weights", "bias"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"non-finite entries in {name}")
        lo = MIN_LABEL_WEIGHT + eps_clip
        if not np.all(self.label_weights > lo):
            bad = np.argwhere(self.label_weights <= lo)[0]
            raise KernelDomainError(
                f"label_weights[{bad[0]},{bad[1]}]={self.label_weights[tuple(bad)]:.6g} "
                f"violates the > {lo:.6g} bound"
            )


@dataclass(frozen=True)
class LdlDataset:
    """Paired features and label distributions with seeded split machinery."""

    features: np.ndarray  # (N, d)
    labels: np.ndarray  # (N, L), rows on the simplex
    label_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        Y = np.asarray(self.labels, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise DimensionError("features and labels must be 2-D with matching row counts")
        if X.shape[0] < 1:
            raise DimensionError("dataset needs at least one sample")
        if not np.all(np.isfinite(X)):
            raise NumericError("features contain non-finite entries")
        if np.any(Y < 0) or not np.all(np.isfinite(Y)):
            raise InvalidDistributionError("label rows must be finite and nonnegative")
        if np.max(np.abs(Y.sum(axis=1) - 1.0)) > 1e-9:
            raise InvalidDistributionError("label rows must sum to 1 within 1e-9")
        names = tuple(self.label_names) or tuple(f"l{i}" for i in range(Y.shape[1]))
        if len(names) != Y.shape[1]:
            raise DimensionError("label_names length must match label count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", Y)
        object.__setattr__(self, "label_names", names)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    def subset(self, indices) -> "LdlDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return LdlDataset(self.features[idx], self.labels[idx], self.label_names)

    def split(self, fractions, seed: int) -> tuple["LdlDataset", ...]:
        """Split into shuffled parts with the given fractions (must sum to 1)."""
        fr = np.asarray(fractions, dtype=np.float64)
        if np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
            raise DimensionError("split fractions must be positive and sum to 1")
        n = len(self)
        order = make_rng(seed, stream=101).permutation(n)
        bounds = np.floor(np.cumsum(fr) * n).astype(int)
        bounds[-1] = n
        parts, lo = [], 0
        for hi in bounds:
            if hi <= lo:
                raise DimensionError("split produced an empty part; dataset too small")
            parts.append(self.subset(order[lo:hi]))
            lo = hi
        return tuple(parts)
