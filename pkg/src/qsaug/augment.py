"""Superposition and mix-up augmentation.

Four mixing rules act on a pair of sample matrices ``(A, B)`` with a mixing
coefficient. For the superposition rules the coefficient is parameterized by
``lambda_sq`` and ``lam = sqrt(lambda_sq)``, ``mu = sqrt(1 - lambda_sq)``:

========================  ==================================================
``superpose_density``     ``lambda_sq A^2 + (1-lambda_sq) B^2 + lam mu (AB + BA)``
``superpose_sample``      same expression on raw sample matrices
``quantum_mix``           ``lam A^2 + mu B^2`` (no interference term)
``mixup``                 ``lam A + (1 - lam) B`` with ``lam`` used directly
========================  ==================================================

The first two equal ``(lam A + mu B)^2``; the cross term is the interference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .dataset import Dataset
from .exceptions import (
    ConfigError,
    DegenerateEmbeddingError,
    DomainError,
    PolicyUnsatisfiableError,
    ShapeError,
)
from .numeric import SeededRng, as_matrix, check_random_state

LAMBDA_GRID = (1.0, 0.2, 0.5, 0.8)
METHODS = ("mixup", "quantum_mix", "superpose_sample", "superpose_density")
POLICIES = ("intra", "inter", "both")


def _coefficients(lambda_sq: float):
    lambda_sq = float(lambda_sq)
    if not 0.0 <= lambda_sq <= 1.0:
        raise DomainError(f"lambda_sq must lie in [0, 1], got {lambda_sq}")
    return np.sqrt(lambda_sq), np.sqrt(1.0 - lambda_sq)


def _check_pair(a, b, square=True):
    a = as_matrix(a, "first sample")
    b = as_matrix(b, "second sample")
    if a.shape != b.shape:
        raise ShapeError(f"paired samples differ in shape: {a.shape} vs {b.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise ShapeError(f"superposition needs square matrices, got {a.shape}")
    return a, b


def density_from_embedding(v) -> np.ndarray:
    """Pure-state density matrix ``u u^T`` of the L2-normalized embedding ``u``."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise DegenerateEmbeddingError("embedding must be a finite non-empty vector")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise DegenerateEmbeddingError("zero embedding has no normalized state")
    u = v / norm
    return np.outer(u, u)


def density_matrices(embeddings, on_zero="error"):
    """Stack of density matrices for ``(N, d)`` embeddings. Returns ``(matrices, n_zero)``.

    An all-zero embedding (every ReLU unit off) has no normalized state. With
    ``on_zero="error"`` it raises; with ``on_zero="zero"`` it maps to the zero
    matrix and is counted in ``n_zero``.
    """
    if on_zero not in ("error", "zero"):
        raise ConfigError(f"on_zero must be 'error' or 'zero', got {on_zero!r}")
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2:
        raise ShapeError(f"expected (N, d) embeddings, got {E.shape}")
    out = np.zeros((E.shape[0], E.shape[1], E.shape[1]))
    n_zero = 0
    for n, v in enumerate(E):
        if on_zero == "zero" and np.all(v == 0.0):
            n_zero += 1
            continue
        out[n] = density_from_embedding(v)
    return out, n_zero


def _superpose(a, b, lambda_sq):
    lam, mu = _coefficients(lambda_sq)
    ab = a @ b
    ba = b @ a
    return lambda_sq * (a @ a) + (1.0 - lambda_sq) * (b @ b) + lam * mu * (ab + ba)


def superpose_density(d_i, d_j, lambda_sq: float) -> np.ndarray:
    """Superpose two density matrices with the interference term."""
    d_i, d_j = _check_pair(d_i, d_j)
    return _superpose(d_i, d_j, lambda_sq)


def superpose_sample(s_i, s_j, lambda_sq: float) -> np.ndarray:
    """Superpose two square sample matrices with the interference term."""
    s_i, s_j = _check_pair(s_i, s_j)
    return _superpose(s_i, s_j, lambda_sq)


def quantum_mix(s_i, s_j, lambda_sq: float, normalized: bool = False) -> np.ndarray:
    """Superposition without interference: ``lam S_i^2 + mu S_j^2``.

    The two coefficients do not sum to one for ``0 < lambda_sq < 1``;
    ``normalized=True`` divides by ``lam + mu``.
    """
    s_i, s_j = _check_pair(s_i, s_j)
    lam, mu = _coefficients(lambda_sq)
    out = lam * (s_i @ s_i) + mu * (s_j @ s_j)
    if normalized:
        out /= lam + mu
    return out


def mixup(s_i, s_j, lam: float) -> np.ndarray:
    s_i, s_j = _check_pair(s_i, s_j, square=False)
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"mix-up weight must lie in [0, 1], got {lam}")
    return lam * s_i + (1.0 - lam) * s_j


def framewise_mix(s_i, s_j, method: str, coef: float) -> np.ndarray:
    """Frame-by-frame mixing for non-square ``T x dim`` sequences.

    Both sequences are truncated to the shorter length. Mix-up keeps its
    convex rule. If the truncated pair happens to be square the squared rule
    applies as usual; otherwise the squared-matrix rules are undefined and
    fall back to the amplitude mix ``(lam a + mu b) / (lam + mu)``, the
    convex rescaling of the un-squared operands.
    """
    a = as_matrix(s_i, "first sample")
    b = as_matrix(s_j, "second sample")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"frame dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    t = min(a.shape[0], b.shape[0])
    a, b = a[:t], b[:t]
    if method == "mixup":
        return mixup(a, b, coef)
    if t == a.shape[1]:
        rule = {"quantum_mix": quantum_mix, "superpose_sample": superpose_sample}.get(method, superpose_density)
        return rule(a, b, coef)
    lam, mu = _coefficients(coef)
    return (lam * a + mu * b) / (lam + mu)


def mix_labels(y_i: int, y_j: int, weight_i: float, n_classes: int) -> np.ndarray:
    """Soft label with ``weight_i`` on class ``y_i`` and the rest on ``y_j``."""
    weight_i = float(weight_i)
    if not 0.0 <= weight_i <= 1.0:
        raise DomainError(f"label weight must lie in [0, 1], got {weight_i}")
    if not (0 <= y_i < n_classes and 0 <= y_j < n_classes):
        raise ShapeError(f"class index out of range for {n_classes} classes")
    probs = np.zeros(n_classes)
    probs[y_i] += weight_i
    probs[y_j] += 1.0 - weight_i
    return probs


def _check_policy(policy):
    if policy not in POLICIES:
        raise ConfigError(f"unknown pair policy {policy!r}; expected one of {POLICIES}")


def all_pairs(labels, policy: str = "both", allow_self_pairs: bool = False):
    """Every unordered valid pair ``(i, j)``, ``i < j``, in lexicographic order.

    With ``allow_self_pairs`` a class holding a single sample contributes
    ``(i, i)`` under the intra-class policy.
    """
    _check_policy(policy)
    labels = np.asarray(labels)
    n = len(labels)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            same = labels[i] == labels[j]
            if (policy == "intra" and same) or (policy == "inter" and not same) or policy == "both":
                pairs.append((i, j))
    if allow_self_pairs and policy == "intra":
        classes, counts = np.unique(labels, return_counts=True)
        for c in classes[counts == 1]:
            i = int(np.flatnonzero(labels == c)[0])
            pairs.append((i, i))
        pairs.sort()
    if not pairs:
        raise PolicyUnsatisfiableError(f"no index pair satisfies policy {policy!r}")
    return pairs


def sample_pairs(labels, policy: str, count: int, rng: SeededRng, allow_self_pairs: bool = False):
    """Draw ``count`` pairs uniformly, with replacement, from the valid unordered pairs.

    The orientation of each distinct pair (which sample takes the
    ``lambda`` weight) is a fair coin flip.
    """
    _check_policy(policy)
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise ConfigError("cannot sample pairs from an empty dataset")
    count = int(count)
    out = []
    if policy == "intra":
        members = [np.flatnonzero(labels == c) for c in np.unique(labels)]
        weights = np.array([len(m) * (len(m) - 1) / 2 for m in members], dtype=np.float64)
        if allow_self_pairs:
            weights = np.where(weights == 0, 1.0, weights)
        if weights.sum() == 0:
            raise PolicyUnsatisfiableError("no class has two samples for intra-class pairs")
        cdf = np.cumsum(weights) / weights.sum()
        for _ in range(count):
            u = rng.uniform(3)
            g = members[min(int(np.searchsorted(cdf, u[0], side="right")), len(members) - 1)]
            if len(g) == 1:
                out.append((int(g[0]), int(g[0])))
                continue
            a = min(int(u[1] * len(g)), len(g) - 1)
            b = min(int(u[2] * (len(g) - 1)), len(g) - 2)
            if b >= a:
                b += 1
            out.append((int(g[a]), int(g[b])))
        return out
    if n < 2:
        raise PolicyUnsatisfiableError("need at least two samples to form a pair")
    if policy == "inter" and len(np.unique(labels)) < 2:
        raise PolicyUnsatisfiableError("inter-class pairs need at least two classes")
    while len(out) < count:
        u = rng.uniform(2)
        i = min(int(u[0] * n), n - 1)
        j = min(int(u[1] * (n - 1)), n - 2)
        if j >= i:
            j += 1
        if policy == "inter" and labels[i] == labels[j]:
            continue
        out.append((i, j))
    return out


@dataclass(frozen=True)
class Provenance:
    method: str
    i: int
    j: int
    lambda_sq: float


@dataclass
class AugmentedDataset(Dataset):
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        super().__post_init__()
        if len(self.provenance) != len(self.features):
            raise ShapeError("one provenance record per sample is required")


def _apply(method, a, b, coef, normalized, nonsquare):
    square = a.shape == b.shape and a.shape[0] == a.shape[1]
    if method == "mixup":
        if a.shape == b.shape:
            return mixup(a, b, coef), method
    elif square:
        if method == "quantum_mix":
            return quantum_mix(a, b, coef, normalized=normalized), method
        if method == "superpose_sample":
            return superpose_sample(a, b, coef), method
        return superpose_density(a, b, coef), method
    if nonsquare != "framewise" or method == "superpose_density":
        raise ShapeError(
            f"{method} cannot pair samples of shapes {a.shape} and {b.shape}"
        )
    return framewise_mix(a, b, method, coef), f"{method}:framewise"


def build_augmented_dataset(
    source: Dataset,
    method: str,
    lambda_set=LAMBDA_GRID,
    policy: str = "both",
    pairs_per_lambda=None,
    include_originals: bool = False,
    rng=None,
    *,
    normalized: bool = False,
    allow_self_pairs: bool = False,
    nonsquare: str = "error",
) -> AugmentedDataset:
    """Mix sampled pairs of ``source`` for every coefficient in ``lambda_set``.

    Parameters
    ----------
    source : Dataset
        Original samples; labels are read through their argmax.
    method : str
        One of ``METHODS``.
    lambda_set : sequence of float
        Grid of coefficients. For ``mixup`` each value is the weight ``lam``;
        for the superposition rules it is ``lambda_sq``. In both cases the
        value becomes the label weight of the first sample.
    policy : {"intra", "inter", "both"}
    pairs_per_lambda : int, "all" or None
        Pairs drawn per coefficient. ``None`` draws ``len(source)``;
        ``"all"`` uses every valid pair exactly once.
    include_originals : bool
        Append the untouched source samples after the mixed ones.
    nonsquare : {"error", "framewise"}
        How to treat pairs that are not equal-shape square matrices.

    Returns
    -------
    AugmentedDataset
        Samples ordered by (coefficient index, pair index), originals last.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown augmentation method {method!r}; expected one of {METHODS}")
    if nonsquare not in ("error", "framewise"):
        raise ConfigError(f"nonsquare must be 'error' or 'framewise', got {nonsquare!r}")
    if len(source) == 0:
        raise ConfigError("cannot augment an empty dataset")
    lambda_set = [float(c) for c in lambda_set]
    if not lambda_set:
        raise ConfigError("lambda_set must not be empty")
    rng = check_random_state(rng)
    labels = source.hard_labels()
    n_classes = source.n_classes

    features, soft, ids, prov = [], [], [], []
    exhaustive = isinstance(pairs_per_lambda, str) and pairs_per_lambda == "all"
    count = len(source) if pairs_per_lambda is None else pairs_per_lambda
    for k, coef in enumerate(lambda_set):
        _coefficients(coef)
        if exhaustive:
            pairs = all_pairs(labels, policy, allow_self_pairs)
        else:
            pairs = sample_pairs(labels, policy, int(count), rng, allow_self_pairs)
        for p, (i, j) in enumerate(pairs):
            mixed, tag = _apply(method, source.features[i], source.features[j], coef, normalized, nonsquare)
            features.append(mixed)
            soft.append(mix_labels(int(labels[i]), int(labels[j]), coef, n_classes))
            ids.append(f"{tag}:{k}:{p}:{source.ids[i]}+{source.ids[j]}")
            prov.append(Provenance(tag, int(i), int(j), coef))
    if include_originals:
        for i in range(len(source)):
            features.append(source.features[i])
            soft.append(source.labels[i])
            ids.append(source.ids[i])
            prov.append(Provenance("original", i, i, 1.0))
    if not features:
        raise ConfigError("augmentation produced no samples")
    for f in features:
        if not np.all(np.isfinite(f)):
            raise DomainError("augmentation produced non-finite entries")
    return AugmentedDataset(features, np.array(soft), ids, prov)


class SuperpositionAugmenter(BaseEstimator):
    """Resampler that returns an augmented ``(X, Y_soft)`` training set.

    Follows the ``fit_resample`` convention of imbalanced-learn samplers so it
    can sit in front of any estimator that accepts soft targets.
    """

    def __init__(
        self,
        method="superpose_sample",
        lambda_set=LAMBDA_GRID,
        policy="both",
        pairs_per_lambda=None,
        include_originals=True,
        normalized=False,
        allow_self_pairs=False,
        nonsquare="error",
        n_classes=None,
        random_state=0,
    ):
        self.method = method
        self.lambda_set = lambda_set
        self.policy = policy
        self.pairs_per_lambda = pairs_per_lambda
        self.include_originals = include_originals
        self.normalized = normalized
        self.allow_self_pairs = allow_self_pairs
        self.nonsquare = nonsquare
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y=None):
        return self

    def fit_resample(self, X, y):
        ds = Dataset.from_arrays(X, y, n_classes=self.n_classes)
        aug = build_augmented_dataset(
            ds,
            self.method,
            self.lambda_set,
            self.policy,
            self.pairs_per_lambda,
            self.include_originals,
            check_random_state(self.random_state),
            normalized=self.normalized,
            allow_self_pairs=self.allow_self_pairs,
            nonsquare=self.nonsquare,
        )
        self.provenance_ = aug.provenance
        shapes = {f.shape for f in aug.features}
        X_out = np.stack(aug.features) if len(shapes) == 1 else aug.features
        return X_out, aug.labels


class DensityMatrixTransformer(TransformerMixin, BaseEstimator):
    """Map ``(N, d)`` embeddings to ``(N, d, d)`` pure-state density matrices.

    ``on_zero`` decides what happens to all-zero embeddings, see :func:`density_matrices`.
    """

    def __init__(self, on_zero="error"):
        self.on_zero = on_zero

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"expected (N, d) embeddings, got {X.shape}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"expected (N, d) embeddings, got {X.shape}")
        return density_matrices(X, self.on_zero)[0]
