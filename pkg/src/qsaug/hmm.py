"""Diagonal-Gaussian hidden Markov models and a per-class HMM classifier.

Everything is computed in log space. Baum-Welch runs forward-backward over a
whole class at once: sequences are zero-padded to a common length and the
padded steps are masked out of every statistic.

Model-bank file layout (little-endian)::

    magic  8 bytes  b"QSHMM\\x00\\x00\\x01"
    <I n_models, <I n_states, <I dim
    per model: <q class label, then pi (n_states), trans (n_states^2),
               means (n_states*dim), vars (n_states*dim) as <f8
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DivergenceError, FormatError, ShapeError

VAR_FLOOR = 1e-4
BANK_MAGIC = b"QSHMM\x00\x00\x01"
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class HmmModel:
    pi: np.ndarray
    trans: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.trans = np.asarray(self.trans, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.vars = np.atleast_2d(np.asarray(self.vars, dtype=np.float64))
        s = self.pi.shape[0]
        if self.trans.shape != (s, s) or self.means.shape[0] != s or self.means.shape != self.vars.shape:
            raise ShapeError(
                f"inconsistent HMM shapes: pi {self.pi.shape}, trans {self.trans.shape}, "
                f"means {self.means.shape}, vars {self.vars.shape}"
            )

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def copy(self) -> "HmmModel":
        return HmmModel(self.pi.copy(), self.trans.copy(), self.means.copy(), self.vars.copy())


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _check_frames(model, frames):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[:, None]
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ShapeError(f"frames must be a non-empty (T, dim) matrix, got {frames.shape}")
    if frames.shape[1] != model.dim:
        raise ShapeError(f"frames have dim {frames.shape[1]}, model expects {model.dim}")
    return frames


def log_emissions(model: HmmModel, frames) -> np.ndarray:
    """``(T, n_states)`` Gaussian log-densities, or ``(B, T, n_states)`` for a padded batch."""
    x = np.asarray(frames, dtype=np.float64)[..., None, :]
    diff = x - model.means
    return -0.5 * np.sum(_LOG_2PI + np.log(model.vars) + diff * diff / model.vars, axis=-1)


def log_forward(model: HmmModel, frames) -> float:
    """Exact ``log P(frames | model)`` by the forward algorithm."""
    frames = _check_frames(model, frames)
    log_b = log_emissions(model, frames)
    log_a = _log(model.trans)
    alpha = _log(model.pi) + log_b[0]
    for t in range(1, frames.shape[0]):
        alpha = logsumexp(alpha[:, None] + log_a, axis=0) + log_b[t]
    return float(logsumexp(alpha))


def _pad(sequences, dim):
    lengths = np.array([s.shape[0] for s in sequences])
    X = np.zeros((len(sequences), lengths.max(), dim))
    for n, s in enumerate(sequences):
        X[n, : s.shape[0]] = s
    mask = np.arange(lengths.max())[None, :] < lengths[:, None]
    return X, lengths, mask


def _expectations(model, X, lengths, mask):
    """Batched log-space forward-backward. Returns per-sequence log-liks, gamma, xi sums."""
    B, T, _ = X.shape
    log_b = log_emissions(model, X)  # (B, T, S)
    log_a = _log(model.trans)
    S = model.n_states
    alpha = np.empty((B, T, S))
    alpha[:, 0] = _log(model.pi) + log_b[:, 0]
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            step = logsumexp(alpha[:, t - 1, :, None] + log_a, axis=1) + log_b[:, t]
            alpha[:, t] = np.where(mask[:, t, None], step, alpha[:, t - 1])
        loglik = logsumexp(alpha[:, -1], axis=1)
        beta = np.zeros((B, T, S))
        for t in range(T - 2, -1, -1):
            nxt = log_b[:, t + 1] + beta[:, t + 1]
            step = logsumexp(log_a[None] + nxt[:, None, :], axis=2)
            beta[:, t] = np.where(mask[:, t + 1, None], step, 0.0)
        if not np.all(np.isfinite(loglik)):
            raise DivergenceError("sequence has zero likelihood under the current model")
        gamma = np.exp(alpha + beta - loglik[:, None, None]) * mask[..., None]
        if T > 1:
            log_xi = (
                alpha[:, :-1, :, None]
                + log_a
                + (log_b[:, 1:] + beta[:, 1:])[:, :, None, :]
                - loglik[:, None, None, None]
            )
            xi = np.exp(log_xi) * mask[:, 1:, None, None]
            xi_sum = np.nansum(xi, axis=(0, 1))
        else:
            xi_sum = np.zeros((S, S))
    return loglik, gamma, xi_sum


def _m_step(model, X, gamma, xi_sum, var_floor):
    occ = gamma.sum(axis=(0, 1))  # (S,)
    pi = gamma[:, 0].sum(axis=0)
    pi = pi / pi.sum()
    row = xi_sum.sum(axis=1, keepdims=True)
    trans = np.where(row > 0, xi_sum / np.where(row > 0, row, 1.0), model.trans)
    trans = trans / trans.sum(axis=1, keepdims=True)
    means = model.means.copy()
    var = model.vars.copy()
    sx = np.einsum("bts,btd->sd", gamma, X)
    live = occ > 1e-300
    means[live] = sx[live] / occ[live, None]
    diff = X[:, :, None, :] - means
    sdd = np.einsum("bts,btsd->sd", gamma, diff * diff)
    var[live] = sdd[live] / occ[live, None]
    var = np.maximum(var, var_floor)
    return HmmModel(pi, trans, means, var)


def baum_welch_fit(model: HmmModel, sequences, max_iters: int = 20, tol: float = 1e-4, var_floor: float = VAR_FLOOR):
    """EM re-estimation. Returns ``(fitted model, log-likelihood trace)``.

    ``trace[k]`` is the total log-likelihood of the parameters after ``k``
    updates. Fitting stops after ``max_iters`` updates or as soon as one
    update improves the total by less than ``tol``.
    """
    sequences = [_check_frames(model, s) for s in sequences]
    if not sequences:
        raise ConfigError("baum_welch_fit needs at least one sequence")
    X, lengths, mask = _pad(sequences, model.dim)
    current = model.copy()
    current.vars = np.maximum(current.vars, var_floor)
    trace = []
    for it in range(max_iters + 1):
        loglik, gamma, xi_sum = _expectations(current, X, lengths, mask)
        total = float(loglik.sum())
        if not np.isfinite(total):
            raise DivergenceError("non-finite log-likelihood during Baum-Welch")
        trace.append(total)
        if it > 0 and trace[-1] - trace[-2] < tol:
            break
        if it == max_iters:
            break
        current = _m_step(current, X, gamma, xi_sum, var_floor)
    return current, trace


def init_model(sequences, n_states: int) -> HmmModel:
    """Uniform pi and transitions, unit variances, means at evenly spaced pooled quantiles."""
    pooled = np.concatenate([np.asarray(s, dtype=np.float64) for s in sequences])
    qs = (np.arange(n_states) + 0.5) / n_states
    means = np.quantile(pooled, qs, axis=0)
    return HmmModel(
        np.full(n_states, 1.0 / n_states),
        np.full((n_states, n_states), 1.0 / n_states),
        means,
        np.ones_like(means),
    )


@dataclass
class HmmClassifierBank:
    classes: np.ndarray
    models: list
    traces: list = None


def train_classifier(sequences, labels, n_states: int = 5, max_iters: int = 20, tol: float = 1e-4, classes=None):
    """Fit one HMM per class on that class's sequences."""
    labels = np.asarray(labels)
    classes = np.unique(labels) if classes is None else np.asarray(classes)
    if n_states < 1:
        raise ConfigError("n_states must be at least 1")
    models, traces = [], []
    dims = {np.asarray(s).shape[-1] for s in sequences}
    if len(dims) > 1:
        raise ShapeError(f"sequences disagree on frame dimension: {sorted(dims)}")
    for c in classes:
        seqs = [np.asarray(s, dtype=np.float64) for s, y in zip(sequences, labels) if y == c]
        if not seqs:
            raise ConfigError(f"class {c} has no training sequences")
        m, tr = baum_welch_fit(init_model(seqs, n_states), seqs, max_iters, tol)
        models.append(m)
        traces.append(tr)
    return HmmClassifierBank(classes, models, traces)


def class_log_likelihoods(bank: HmmClassifierBank, frames) -> np.ndarray:
    return np.array([log_forward(m, frames) for m in bank.models])


def classify(bank: HmmClassifierBank, frames):
    """Maximum-likelihood class (uniform prior); ties go to the lowest index."""
    ll = class_log_likelihoods(bank, frames)
    return bank.classes[int(np.argmax(ll))], ll


def save_bank(path, bank: HmmClassifierBank) -> None:
    m0 = bank.models[0]
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<III", len(bank.models), m0.n_states, m0.dim))
        for c, m in zip(bank.classes, bank.models):
            fh.write(struct.pack("<q", int(c)))
            for arr in (m.pi, m.trans, m.means, m.vars):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_bank(path) -> HmmClassifierBank:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != BANK_MAGIC:
        raise FormatError(f"{path}: not an HMM bank file")
    try:
        n, s, d = struct.unpack_from("<III", blob, 8)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    block = 8 + 8 * (s + s * s + 2 * s * d)
    if len(blob) != 20 + n * block:
        raise FormatError(f"{path}: expected {20 + n * block} bytes, found {len(blob)}")
    off = 20
    classes, models = [], []
    for _ in range(n):
        classes.append(struct.unpack_from("<q", blob, off)[0])
        vals = np.frombuffer(blob, "<f8", (block - 8) // 8, off + 8)
        off += block
        pi, rest = vals[:s], vals[s:]
        trans, rest = rest[: s * s].reshape(s, s), rest[s * s:]
        means, var = rest[: s * d].reshape(s, d), rest[s * d:].reshape(s, d)
        models.append(HmmModel(pi.copy(), trans.copy(), means.copy(), var.copy()))
    return HmmClassifierBank(np.array(classes), models)


class GaussianHMMClassifier(ClassifierMixin, BaseEstimator):
    """Per-class diagonal-Gaussian HMM bank with an estimator interface.

    ``X`` is a list of ``(T_n, dim)`` frame matrices. Soft ``(N, C)`` targets
    are reduced to their argmax. Initialization is deterministic, so there is
    no ``random_state``.
    """

    def __init__(self, n_states=5, max_iters=20, tol=1e-4):
        self.n_states = n_states
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y):
        y = np.asarray(y)
        if y.ndim == 2:
            y = np.argmax(y, axis=1)
        X = list(X)
        if len(X) != len(y) or not X:
            raise ShapeError("X and y must be non-empty and of equal length")
        self.bank_ = train_classifier(X, y, self.n_states, self.max_iters, self.tol)
        self.classes_ = self.bank_.classes
        self.n_features_in_ = np.asarray(X[0]).shape[-1]
        return self

    def log_likelihoods(self, X) -> np.ndarray:
        check_is_fitted(self, "bank_")
        return np.array([class_log_likelihoods(self.bank_, x) for x in X])

    def predict(self, X):
        ll = self.log_likelihoods(X)
        return self.classes_[np.argmax(ll, axis=1)]

    def predict_proba(self, X):
        ll = self.log_likelihoods(X)
        return np.exp(ll - logsumexp(ll, axis=1, keepdims=True))
