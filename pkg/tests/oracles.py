"""Independent reference computations shared by the test modules.

Nothing here calls the code under test for the quantity being checked: the
finite-difference gradient only uses the forward pass and the loss, and the
HMM helpers enumerate state paths or sample with numpy's own generator.
"""
import itertools

import numpy as np

from qsaug.hmm import HmmModel
from qsaug.lstm import LstmConfig, forward, init_lstm, loss_ce
from qsaug.numeric import SeededRng

TINY = dict(input_dim=4, seq_len=3, hidden_dims=(5, 5, 5), embed_dim=6, n_classes=2)


def tiny_problem(seed=0, batch=3):
    cfg = LstmConfig(**TINY, seed=seed)
    params, _ = init_lstm(cfg, SeededRng(seed))
    r = np.random.default_rng(seed + 100)
    # randomize the biases too so every gate and dense1 unit is exercised
    for k in params:
        if k.startswith("b") or k.endswith("_b"):
            params[k] = params[k] + r.normal(scale=0.3, size=params[k].shape)
    x = r.normal(size=(batch, cfg.seq_len, cfg.input_dim))
    y = np.zeros((batch, cfg.n_classes))
    y[np.arange(batch), r.integers(0, cfg.n_classes, batch)] = 1.0
    return cfg, params, x, y


def numeric_gradients(params, x, y, eps=1e-5):
    """Central differences of the mean cross-entropy for every parameter entry."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            lp, _ = loss_ce(forward(params, x)[0], y)
            flat[k] = old - eps
            lm, _ = loss_ce(forward(params, x)[0], y)
            flat[k] = old
            g.reshape(-1)[k] = (lp - lm) / (2 * eps)
        out[name] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over all entries of all parameters.

    The floor keeps entries whose true gradient is ~1e-9 from turning
    finite-difference round-off (~1e-11) into a large relative figure.
    """
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gaussian_logpdf(x, mean, var):
    x, mean, var = (np.asarray(a, dtype=np.float64) for a in (x, mean, var))
    return float(np.sum(-0.5 * np.log(2 * np.pi * var) - 0.5 * (x - mean) ** 2 / var))


def brute_force_loglik(model, frames):
    """log P(frames) by summing over every state path (tiny models only)."""
    frames = np.atleast_2d(frames)
    S, T = model.n_states, frames.shape[0]
    total = 0.0
    for path in itertools.product(range(S), repeat=T):
        p = model.pi[path[0]]
        for t in range(1, T):
            p *= model.trans[path[t - 1], path[t]]
        if p == 0.0:
            continue
        logp = np.log(p) + sum(gaussian_logpdf(frames[t], model.means[s], model.vars[s]) for t, s in enumerate(path))
        total += np.exp(logp)
    return float(np.log(total))


def sample_hmm(model, length, gen):
    """Draw one observation sequence with a numpy Generator."""
    s = gen.choice(model.n_states, p=model.pi)
    out = np.empty((length, model.dim))
    for t in range(length):
        out[t] = gen.normal(model.means[s], np.sqrt(model.vars[s]))
        s = gen.choice(model.n_states, p=model.trans[s])
    return out


def separated_hmms(n_models=3, n_states=3, dim=2, spacing=6.0):
    """Left-to-right HMMs whose state means sit on different rays."""
    models = []
    for m in range(n_models):
        angle = 2 * np.pi * m / n_models
        direction = np.array([np.cos(angle), np.sin(angle)] + [0.0] * (dim - 2))
        means = np.stack([(s + 1) * spacing * direction for s in range(n_states)])
        trans = np.zeros((n_states, n_states))
        for s in range(n_states):
            trans[s, s] = 0.7
            trans[s, min(s + 1, n_states - 1)] += 0.3
        pi = np.zeros(n_states)
        pi[0] = 1.0
        models.append(HmmModel(pi, trans, means, np.ones((n_states, dim))))
    return models
