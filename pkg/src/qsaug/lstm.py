"""Stacked LSTM sequence classifier trained with BPTT and Adam.

Architecture: three LSTM layers, the last timestep's top hidden state feeds
``dense1`` (ReLU, the embedding layer) and then the linear ``dense2`` whose
logits go through softmax cross-entropy against (soft) targets.

Gate rows inside every ``W``/``U``/``b`` block are ordered input, forget,
candidate, output. Row-vector convention throughout: ``z = x W^T + h U^T + b``.
All array functions accept a single ``(T, D)`` sequence or a ``(B, T, D)``
batch.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DivergenceError, FormatError, ShapeError
from .numeric import SeededRng, log_softmax, softmax

CHECKPOINT_MAGIC = b"QSLSTM\x00\x01"


@dataclass
class LstmConfig:
    input_dim: int
    n_classes: int = 10
    seq_len: int = 28
    hidden_dims: tuple = (64, 64, 64)
    embed_dim: int = 64
    learning_rate: float = 2e-3
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if len(self.hidden_dims) != 3:
            raise ConfigError(f"exactly 3 stacked LSTM layers are required, got {len(self.hidden_dims)}")
        dims = (self.input_dim, self.n_classes, self.seq_len, self.embed_dim, *self.hidden_dims)
        if min(dims) <= 0:
            raise ConfigError(f"all dimensions must be positive: {asdict(self)}")
        if self.batch_size <= 0 or self.epochs < 0:
            raise ConfigError("batch_size must be positive and epochs non-negative")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def records(self):
        return [
            (e + 1, self.train_loss[e], self.train_acc[e], self.val_acc[e])
            for e in range(len(self))
        ]


def param_names(n_layers: int = 3):
    names = []
    for l in range(1, n_layers + 1):
        names += [f"W{l}", f"U{l}", f"b{l}"]
    return names + ["dense1_W", "dense1_b", "dense2_W", "dense2_b"]


def param_shapes(cfg: LstmConfig):
    shapes = {}
    in_dim = cfg.input_dim
    for l, h in enumerate(cfg.hidden_dims, start=1):
        shapes[f"W{l}"] = (4 * h, in_dim)
        shapes[f"U{l}"] = (4 * h, h)
        shapes[f"b{l}"] = (4 * h,)
        in_dim = h
    shapes["dense1_W"] = (cfg.embed_dim, in_dim)
    shapes["dense1_b"] = (cfg.embed_dim,)
    shapes["dense2_W"] = (cfg.n_classes, cfg.embed_dim)
    shapes["dense2_b"] = (cfg.n_classes,)
    return shapes


def _n_layers(params) -> int:
    return sum(1 for k in params if k.startswith("U"))


def init_lstm(cfg: LstmConfig, rng: SeededRng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget-gate bias 1, zero Adam moments."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            b = np.zeros(shape)
            if name.startswith("b"):
                h = shape[0] // 4
                b[h:2 * h] = 1.0
            params[name] = b
        else:
            s = 1.0 / np.sqrt(shape[1])
            params[name] = rng.uniform(shape[0] * shape[1], -s, s).reshape(shape)
    state = AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )
    return params, state


def _sigmoid(z):
    # split by sign so large |z| never overflows exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_cell_forward(x_t, h_prev, c_prev, W, U, b):
    """One LSTM step. Returns ``(h_t, c_t, cache)``; works on vectors or row batches."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    h = U.shape[1]
    if W.shape[0] != 4 * h or x_t.shape[-1] != W.shape[1] or h_prev.shape[-1] != h:
        raise ShapeError(
            f"cell shapes disagree: x {x_t.shape}, h {h_prev.shape}, W {W.shape}, U {U.shape}"
        )
    z = x_t @ W.T + h_prev @ U.T + b
    i = _sigmoid(z[..., :h])
    f = _sigmoid(z[..., h:2 * h])
    g = np.tanh(z[..., 2 * h:3 * h])
    o = _sigmoid(z[..., 3 * h:])
    c_t = f * c_prev + i * g
    tc = np.tanh(c_t)
    h_t = o * tc
    return h_t, c_t, (i, f, g, o, tc, z)


def _as_batch(x, input_dim=None):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected (T, D) or (B, T, D) input, got {x.shape}")
    if input_dim is not None and x.shape[2] != input_dim:
        raise ShapeError(f"input has {x.shape[2]} features, model expects {input_dim}")
    return x, single


def forward(params, x):
    """Run the network. Returns ``(logits, embedding, caches)``.

    For a single ``(T, D)`` sequence the outputs are vectors; for a batch they
    are ``(B, C)`` and ``(B, embed_dim)``.
    """
    x, single = _as_batch(x, params["W1"].shape[1])
    B, T, _ = x.shape
    seq = np.transpose(x, (1, 0, 2))  # (T, B, D)
    layers = []
    for l in range(1, _n_layers(params) + 1):
        W, U, b = params[f"W{l}"], params[f"U{l}"], params[f"b{l}"]
        h = U.shape[1]
        gates_x = seq @ W.T + b  # (T, B, 4h)
        hs = np.zeros((T + 1, B, h))
        cs = np.zeros((T + 1, B, h))
        acts = np.empty((T, B, 4 * h))
        tcs = np.empty((T, B, h))
        UT = U.T
        for t in range(T):
            z = gates_x[t] + hs[t] @ UT
            a = acts[t]
            a[:, :2 * h] = _sigmoid(z[:, :2 * h])
            a[:, 2 * h:3 * h] = np.tanh(z[:, 2 * h:3 * h])
            a[:, 3 * h:] = _sigmoid(z[:, 3 * h:])
            cs[t + 1] = a[:, h:2 * h] * cs[t] + a[:, :h] * a[:, 2 * h:3 * h]
            tcs[t] = np.tanh(cs[t + 1])
            hs[t + 1] = a[:, 3 * h:] * tcs[t]
        layers.append({"x": seq, "hs": hs, "cs": cs, "acts": acts, "tcs": tcs})
        seq = hs[1:]
    h_last = seq[-1]
    pre1 = h_last @ params["dense1_W"].T + params["dense1_b"]
    emb = np.maximum(pre1, 0.0)
    logits = emb @ params["dense2_W"].T + params["dense2_b"]
    caches = {"layers": layers, "h_last": h_last, "pre1": pre1, "emb": emb, "single": single}
    if single:
        return logits[0], emb[0], caches
    return logits, emb, caches


def loss_ce(logits, target):
    """Softmax cross-entropy against a soft target.

    Returns ``(loss, grad_logits)``. For a batch the loss is the mean and the
    gradient carries the matching ``1/B`` factor.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise ShapeError(f"logits {logits.shape} and target {target.shape} differ")
    logp = log_softmax(logits)
    if logits.ndim == 1:
        return float(-np.sum(target * logp)), softmax(logits) - target
    B = logits.shape[0]
    loss = float(-np.sum(target * logp) / B)
    return loss, (softmax(logits) - target) / B


def backward(params, caches, grad_logits):
    """Exact gradients of the loss with respect to every parameter (BPTT)."""
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if caches["single"]:
        grad_logits = grad_logits[None]
    emb, pre1, h_last = caches["emb"], caches["pre1"], caches["h_last"]
    if grad_logits.shape != (emb.shape[0], params["dense2_W"].shape[0]):
        raise ShapeError("grad_logits does not match the cached forward pass")
    n_layers = _n_layers(params)
    if len(caches["layers"]) != n_layers:
        raise ShapeError("cache was produced by a model with a different depth")

    grads = {}
    grads["dense2_W"] = grad_logits.T @ emb
    grads["dense2_b"] = grad_logits.sum(axis=0)
    d_pre1 = (grad_logits @ params["dense2_W"]) * (pre1 > 0)
    grads["dense1_W"] = d_pre1.T @ h_last
    grads["dense1_b"] = d_pre1.sum(axis=0)
    dh_last = d_pre1 @ params["dense1_W"]

    top = caches["layers"][-1]
    T, B, _ = top["acts"].shape
    d_seq = np.zeros((T, B, dh_last.shape[1]))
    d_seq[-1] = dh_last
    for l in range(n_layers, 0, -1):
        cache = caches["layers"][l - 1]
        W, U = params[f"W{l}"], params[f"U{l}"]
        h = U.shape[1]
        acts, tcs, cs, hs = cache["acts"], cache["tcs"], cache["cs"], cache["hs"]
        dz_all = np.empty((T, B, 4 * h))
        dh_next = np.zeros((B, h))
        dc_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            a = acts[t]
            i, f, g, o = a[:, :h], a[:, h:2 * h], a[:, 2 * h:3 * h], a[:, 3 * h:]
            dh = d_seq[t] + dh_next
            tc = tcs[t]
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[t]
            dz[:, :h] = dc * g * i * (1.0 - i)
            dz[:, h:2 * h] = dc * cs[t] * f * (1.0 - f)
            dz[:, 2 * h:3 * h] = dc * i * (1.0 - g * g)
            dz[:, 3 * h:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ U
        flat_dz = dz_all.reshape(T * B, 4 * h)
        grads[f"W{l}"] = flat_dz.T @ cache["x"].reshape(T * B, -1)
        grads[f"U{l}"] = flat_dz.T @ hs[:-1].reshape(T * B, h)
        grads[f"b{l}"] = flat_dz.sum(axis=0)
        d_seq = dz_all @ W
    return {k: grads[k] for k in param_names(n_layers)}


def global_norm(grads) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def adam_step(params, grads, state: AdamState, lr: float):
    """Bias-corrected Adam update. Returns new ``(params, state)``; inputs are not mutated."""
    if lr < 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {k}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = m[k] / bc1
        v_hat = v[k] / bc2
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m, v, t, b1, b2, state.eps)


def pad_sequences(features, seq_len: int) -> np.ndarray:
    """Truncate or zero-pad (at the end) every ``(T, D)`` matrix to ``seq_len`` rows."""
    features = list(features)
    if not features:
        raise ConfigError("no sequences to pad")
    dim = np.asarray(features[0]).shape[1]
    out = np.zeros((len(features), seq_len, dim))
    for n, f in enumerate(features):
        f = np.asarray(f, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != dim:
            raise ShapeError(f"sequence {n} has shape {f.shape}, expected (T, {dim})")
        t = min(seq_len, f.shape[0])
        out[n, :t] = f[:t]
    return out


def _predict_logits(params, X, chunk=1000):
    out = []
    for s in range(0, X.shape[0], chunk):
        logits, _, _ = forward(params, X[s:s + chunk])
        out.append(logits)
    return np.concatenate(out)


def train(cfg: LstmConfig, X, Y, X_val=None, Y_val=None, log=None):
    """Mini-batch Adam training with a seeded per-epoch shuffle.

    ``X`` is ``(N, seq_len, input_dim)``, ``Y`` ``(N, n_classes)`` soft labels.
    Train loss and accuracy are running averages over the epoch's batches.
    Returns ``(params, history)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] == 0:
        raise ConfigError(f"training data must be a non-empty (N, T, D) array, got {X.shape}")
    if X.shape[2] != cfg.input_dim or Y.shape != (X.shape[0], cfg.n_classes):
        raise ShapeError(f"data shapes {X.shape}, {Y.shape} do not match the config")
    rng = SeededRng(cfg.seed)
    params, state = init_lstm(cfg, rng)
    shuffle_rng = rng.spawn(1)
    history = TrainHistory()
    n = X.shape[0]
    y_true = np.argmax(Y, axis=1)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            logits, _, caches = forward(params, X[idx])
            loss, dlogits = loss_ce(logits, Y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}")
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y_true[idx]))
            grads = backward(params, caches, dlogits)
            if cfg.clip_norm:
                norm = global_norm(grads)
                if norm > cfg.clip_norm:
                    grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
            params, state = adam_step(params, grads, state, cfg.learning_rate)
        history.train_loss.append(total_loss / n)
        history.train_acc.append(correct / n)
        if X_val is not None and len(X_val):
            history.val_acc.append(evaluate(params, X_val, Y_val))
        else:
            history.val_acc.append(float("nan"))
        if log is not None:
            log(epoch + 1, history)
    return params, history


def evaluate(params, X, Y) -> float:
    """Fraction of samples whose predicted argmax equals the target argmax."""
    X, _ = _as_batch(X, params["W1"].shape[1])
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    pred = np.argmax(_predict_logits(params, X), axis=1)
    return float(np.mean(pred == np.argmax(Y, axis=1)))


def extract_embeddings(params, X) -> np.ndarray:
    """Penultimate (``dense1``) activations, one row per sample."""
    X, _ = _as_batch(X, params["W1"].shape[1])
    out = []
    for s in range(0, X.shape[0], 1000):
        _, emb, _ = forward(params, X[s:s + 1000])
        out.append(emb)
    return np.concatenate(out)


# -- checkpoint -------------------------------------------------------------
#
# magic      8 bytes  b"QSLSTM\x00\x01"
# header     <I input_dim, <I n_layers, n_layers x <I hidden, <I embed_dim,
#            <I n_classes, <I seq_len, <d learning_rate, <I epochs,
#            <I batch_size, <Q seed, <d clip_norm (0 = off)
# payload    every parameter in ``param_names`` order, row-major <f8


def save_checkpoint(path, cfg: LstmConfig, params) -> None:
    n_layers = len(cfg.hidden_dims)
    head = struct.pack("<II", cfg.input_dim, n_layers)
    head += struct.pack(f"<{n_layers}I", *cfg.hidden_dims)
    head += struct.pack(
        "<IIIdIIQd",
        cfg.embed_dim,
        cfg.n_classes,
        cfg.seq_len,
        cfg.learning_rate,
        cfg.epochs,
        cfg.batch_size,
        cfg.seed,
        cfg.clip_norm or 0.0,
    )
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(head)
        for name in param_names(n_layers):
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`. Returns ``(cfg, params)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not an LSTM checkpoint")
    try:
        off = 8
        input_dim, n_layers = struct.unpack_from("<II", blob, off)
        off += 8
        hidden = struct.unpack_from(f"<{n_layers}I", blob, off)
        off += 4 * n_layers
        vals = struct.unpack_from("<IIIdIIQd", blob, off)
        off += struct.calcsize("<IIIdIIQd")
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    embed_dim, n_classes, seq_len, lr, epochs, batch_size, seed, clip = vals
    try:
        cfg = LstmConfig(
            input_dim=input_dim,
            n_classes=n_classes,
            seq_len=seq_len,
            hidden_dims=hidden,
            embed_dim=embed_dim,
            learning_rate=lr,
            epochs=epochs,
            batch_size=batch_size,
            seed=seed,
            clip_norm=clip or None,
        )
    except ConfigError as exc:
        raise FormatError(f"{path}: invalid config block ({exc})") from exc
    params = {}
    for name, shape in param_shapes(cfg).items():
        size = int(np.prod(shape)) * 8
        if off + size > len(blob):
            raise FormatError(f"{path}: truncated parameter block {name}")
        params[name] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=off).reshape(shape).copy()
        off += size
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return cfg, params


class LSTMClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper around :func:`train`.

    ``y`` may be class labels (1-D) or soft targets ``(N, n_classes)``; soft
    targets are what the augmenters emit. Variable-length ``(T, D)`` inputs
    are padded or truncated to ``seq_len`` (the longest sequence if unset).
    ``transform`` returns the 64-d penultimate embeddings.
    """

    def __init__(
        self,
        hidden_dims=(64, 64, 64),
        embed_dim=64,
        seq_len=None,
        epochs=30,
        batch_size=16,
        learning_rate=2e-3,
        clip_norm=None,
        n_classes=None,
        random_state=0,
    ):
        self.hidden_dims = hidden_dims
        self.embed_dim = embed_dim
        self.seq_len = seq_len
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.n_classes = n_classes
        self.random_state = random_state

    def _prepare(self, X, seq_len=None):
        if isinstance(X, np.ndarray) and X.ndim == 3:
            X = X.astype(np.float64, copy=False)
            if seq_len is None or X.shape[1] == seq_len:
                return X
            return pad_sequences(list(X), seq_len)
        X = list(X)
        if seq_len is None:
            seq_len = max(np.asarray(x).shape[0] for x in X)
        return pad_sequences(X, seq_len)

    def _targets(self, y):
        y = np.asarray(y)
        if y.ndim == 2:
            self.classes_ = np.arange(y.shape[1])
            return y.astype(np.float64)
        if self.n_classes is not None:
            self.classes_ = np.arange(self.n_classes)
        else:
            self.classes_ = np.unique(y)
        idx = np.searchsorted(self.classes_, y)
        if np.any(self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y):
            raise ShapeError("labels outside the declared classes")
        Y = np.zeros((y.size, len(self.classes_)))
        Y[np.arange(y.size), idx] = 1.0
        return Y

    def _encode(self, y):
        y = np.asarray(y)
        if y.ndim == 2:
            return y
        Y = np.zeros((y.size, len(self.classes_)))
        Y[np.arange(y.size), np.searchsorted(self.classes_, y)] = 1.0
        return Y

    def fit(self, X, y, validation_data=None):
        X = self._prepare(X, self.seq_len)
        Y = self._targets(y)
        self.config_ = LstmConfig(
            input_dim=X.shape[2],
            n_classes=Y.shape[1],
            seq_len=X.shape[1],
            hidden_dims=self.hidden_dims,
            embed_dim=self.embed_dim,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.random_state or 0,
            clip_norm=self.clip_norm,
        )
        X_val = Y_val = None
        if validation_data is not None:
            X_val = self._prepare(validation_data[0], X.shape[1])
            Y_val = self._encode(validation_data[1])
        self.params_, self.history_ = train(self.config_, X, Y, X_val, Y_val)
        self.n_features_in_ = X.shape[2]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        return _predict_logits(self.params_, self._prepare(X, self.config_.seq_len))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def transform(self, X):
        check_is_fitted(self, "params_")
        return extract_embeddings(self.params_, self._prepare(X, self.config_.seq_len))

    def score(self, X, y, sample_weight=None):
        check_is_fitted(self, "params_")
        y = np.asarray(y)
        if y.ndim == 2:
            y = self.classes_[np.argmax(y, axis=1)]
        return float(np.mean(self.predict(X) == y))
