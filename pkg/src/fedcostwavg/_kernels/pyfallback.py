"""Vectorized numpy implementation of the training kernels.

This is the fallback used when the compiled extension is unavailable.  Both
backends share one calling convention:

- ``w``     flat float64 parameter vector, mutated in place by *_sgd_epoch
- ``X``     (n, d) float64 inputs, C-contiguous
- ``Y``     (n, o) float64 regression targets
- ``y``     (n,) int64 class labels
- ``perm``  (n,) int64 visit order for one epoch; minibatches are consecutive
            slices of it, the last one possibly short

Losses are means over the batch.  Class probabilities are floored at
``PROB_FLOOR`` before the log so cross-entropy stays finite.
"""

from __future__ import annotations

import functools

import numpy as np

PROB_FLOOR = 1e-12

name = "numpy"
compiled = False


def _quiet(fn):
    """Silence fp warnings; callers detect non-finite results explicitly,
    matching the compiled backend's behaviour."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore"):
            return fn(*args, **kwargs)

    return wrapper


def _split_linear(w, d, o):
    return w[: d * o].reshape(d, o), w[d * o :]


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# --- linear regression (squared error) ---

@_quiet
def linreg_loss(w, X, Y):
    W, b = _split_linear(w, X.shape[1], Y.shape[1])
    diff = X @ W + b - Y
    return float(np.mean(np.sum(diff * diff, axis=1)))


@_quiet
def linreg_grad(w, X, Y):
    n, d = X.shape
    o = Y.shape[1]
    W, b = _split_linear(w, d, o)
    diff = (X @ W + b - Y) * (2.0 / n)
    return np.concatenate([(X.T @ diff).ravel(), diff.sum(axis=0)])


@_quiet
def linreg_sgd_epoch(w, X, Y, perm, lr, batch_size):
    n = X.shape[0]
    for lo in range(0, n, batch_size):
        rows = perm[lo : lo + batch_size]
        w -= lr * linreg_grad(w, X[rows], Y[rows])


# --- multinomial logistic regression (softmax cross-entropy) ---

@_quiet
def logreg_loss(w, X, y):
    d = X.shape[1]
    c = w.shape[0] // (d + 1)
    W, b = _split_linear(w, d, c)
    probs = _softmax(X @ W + b)
    picked = probs[np.arange(X.shape[0]), y]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


@_quiet
def logreg_grad(w, X, y):
    n, d = X.shape
    c = w.shape[0] // (d + 1)
    W, b = _split_linear(w, d, c)
    delta = _softmax(X @ W + b)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return np.concatenate([(X.T @ delta).ravel(), delta.sum(axis=0)])


@_quiet
def logreg_sgd_epoch(w, X, y, perm, lr, batch_size):
    n = X.shape[0]
    for lo in range(0, n, batch_size):
        rows = perm[lo : lo + batch_size]
        w -= lr * logreg_grad(w, X[rows], y[rows])


# --- one-hidden-layer MLP, tanh activation, softmax cross-entropy ---

def _mlp_split(w, d, h, c):
    o1 = d * h
    o2 = o1 + h
    o3 = o2 + h * c
    return w[:o1].reshape(d, h), w[o1:o2], w[o2:o3].reshape(h, c), w[o3:]


@_quiet
def mlp_loss(w, X, y, hidden):
    d = X.shape[1]
    c = (w.shape[0] - (d + 1) * hidden) // (hidden + 1)
    W1, b1, W2, b2 = _mlp_split(w, d, hidden, c)
    hid = np.tanh(X @ W1 + b1)
    probs = _softmax(hid @ W2 + b2)
    picked = probs[np.arange(X.shape[0]), y]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


@_quiet
def mlp_grad(w, X, y, hidden):
    n, d = X.shape
    c = (w.shape[0] - (d + 1) * hidden) // (hidden + 1)
    W1, b1, W2, b2 = _mlp_split(w, d, hidden, c)
    hid = np.tanh(X @ W1 + b1)
    delta2 = _softmax(hid @ W2 + b2)
    delta2[np.arange(n), y] -= 1.0
    delta2 /= n
    delta1 = (delta2 @ W2.T) * (1.0 - hid * hid)
    return np.concatenate(
        [
            (X.T @ delta1).ravel(),
            delta1.sum(axis=0),
            (hid.T @ delta2).ravel(),
            delta2.sum(axis=0),
        ]
    )


@_quiet
def mlp_sgd_epoch(w, X, y, perm, lr, batch_size, hidden):
    n = X.shape[0]
    for lo in range(0, n, batch_size):
        rows = perm[lo : lo + batch_size]
        w -= lr * mlp_grad(w, X[rows], y[rows], hidden)
