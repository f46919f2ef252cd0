"""Numpy implementations of the row kernels.

These are the reference semantics; ``_ckernels.pyx`` must agree with them
(bitwise for ``sweep_counts``, to rounding for the float kernels).
"""
import numpy as np

# biases evaluated per chunk in sweep_counts; bounds the temporary to
# _SWEEP_CHUNK * n_samples doubles
_SWEEP_CHUNK = 256


def softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def softmax_rows_backward(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def layer_norm_forward(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd[:, None]
    return xhat * gamma + beta, xhat, rstd


def layer_norm_backward(g, xhat, rstd, gamma):
    dxhat = g * gamma
    a = dxhat.mean(axis=1, keepdims=True)
    b = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - a - xhat * b)
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


def sweep_counts(max_seen, max_unseen, tie_to_seen, hit_seen, hit_unseen,
                 label_seen, biases):
    tie_to_seen = tie_to_seen.astype(bool)
    hit_seen = hit_seen.astype(bool)
    hit_unseen = hit_unseen.astype(bool)
    label_seen = label_seen.astype(bool)
    seen_hits = np.zeros(len(biases), dtype=np.int64)
    unseen_hits = np.zeros(len(biases), dtype=np.int64)
    for start in range(0, len(biases), _SWEEP_CHUNK):
        b = biases[start:start + _SWEEP_CHUNK, None]
        v = max_unseen[None, :] + b
        pick_seen = (max_seen > v) | ((max_seen == v) & tie_to_seen)
        hit = np.where(pick_seen, hit_seen, hit_unseen)
        seen_hits[start:start + len(b)] = (hit & label_seen).sum(axis=1)
        unseen_hits[start:start + len(b)] = (hit & ~label_seen).sum(axis=1)
    return seen_hits, unseen_hits
