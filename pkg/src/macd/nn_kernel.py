"""Dense / batch-norm / activation layers with hand-written backward passes,
the losses used by the model, gradient reversal, and Adam.

Everything works on float64 numpy arrays laid out batch-major (rows are
samples). Backward functions take the same inputs as their forward and
recompute whatever intermediate they need, so no hidden state is kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import NumericalError, ValidationError

PROB_CLAMP = 1e-7


@dataclass
class DenseLayer:
    W: np.ndarray  # (in_dim, out_dim)
    b: np.ndarray  # (out_dim,)

    @classmethod
    def init(cls, in_dim, out_dim, rng):
        # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias
        bound = 1.0 / np.sqrt(in_dim)
        W = rng.uniform(-bound, bound, size=(in_dim, out_dim))
        b = rng.uniform(-bound, bound, size=out_dim)
        return cls(W, b)


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def init(cls, dim, eps=1e-5, momentum=0.1):
        return cls(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim), eps, momentum)


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _check_cols(X, dim, what):
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValidationError(f"{what}: expected input width {dim}, got shape {X.shape}")


def dense_forward(layer: DenseLayer, X):
    _check_cols(X, layer.W.shape[0], "dense_forward")
    return X @ layer.W + layer.b


def dense_backward(layer: DenseLayer, X, dY):
    """Returns ``(dX, dW, db)``."""
    return dY @ layer.W.T, X.T @ dY, dY.sum(axis=0)


def batchnorm_forward(bn: BatchNorm, X, training: bool):
    """Normalize per feature. Training mode uses batch statistics (biased
    variance) and updates the running averages in place."""
    _check_cols(X, bn.gamma.shape[0], "batchnorm_forward")
    if training:
        if X.shape[0] < 2:
            raise ValidationError("batch norm in training mode needs a batch of at least 2")
        Y, mean, var = _backend.bn_train_fwd(X, bn.gamma, bn.beta, bn.eps)
        m = bn.momentum
        bn.running_mean = (1 - m) * bn.running_mean + m * mean
        bn.running_var = (1 - m) * bn.running_var + m * var
        return Y
    return (X - bn.running_mean) * (bn.gamma / np.sqrt(bn.running_var + bn.eps)) + bn.beta


def batchnorm_backward(bn: BatchNorm, X, dY):
    """Training-mode backward. Returns ``(dX, dgamma, dbeta)``."""
    return _backend.bn_bwd(X, dY, bn.gamma, bn.eps)


def leaky_relu(X, slope=0.01):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        return _backend.leaky_relu_fwd(X, slope)
    return np.where(X >= 0, X, slope * X)


def leaky_relu_backward(X, dY, slope=0.01):
    if X.ndim == 2:
        return _backend.leaky_relu_bwd(X, dY, slope)
    return np.where(X >= 0, dY, slope * dY)


def softmax_rows(X):
    X = np.asarray(X, dtype=np.float64)
    e = np.exp(X - X.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(Y, dY):
    """Gradient w.r.t. the logits given the softmax output ``Y``."""
    return Y * (dY - (dY * Y).sum(axis=-1, keepdims=True))


def sigmoid(z):
    # tanh form does not overflow for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def clamp_prob(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce(y, p):
    """Mean binary cross-entropy; ``p`` is clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(y, dtype=np.float64).ravel()
    p = np.asarray(p, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ValidationError(f"bce: length mismatch {y.shape[0]} vs {p.shape[0]}")
    p = clamp_prob(p)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def bce_backward(y, p):
    """dL/dp of :func:`bce`, zero where the clamp is active."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    pc = clamp_prob(p)
    g = -(y / pc - (1 - y) / (1 - pc)) / y.size
    return np.where(pc == p, g, 0.0)


def sigmoid_bce(y, z):
    """BCE of ``sigmoid(z)`` against ``y`` plus its gradient w.r.t. ``z``."""
    p = sigmoid(z)
    loss = bce(y, p)
    dp = bce_backward(y, p)
    return loss, dp * p * (1 - p)


def masked_mse(x_hat, x, m):
    """Mean squared error over entries where ``m`` is 1.

    Returns ``(loss, degenerate)``; ``degenerate`` is True (and loss 0.0)
    when nothing is masked.
    """
    if not (np.shape(x_hat) == np.shape(x) == np.shape(m)):
        raise ValidationError("masked_mse: shape mismatch")
    s, count = _backend.masked_sq_err(np.atleast_2d(x_hat), np.atleast_2d(x), np.atleast_2d(m))
    if count == 0:
        return 0.0, True
    return s / count, False


def masked_mse_backward(x_hat, x, m):
    count = np.count_nonzero(m)
    if count == 0:
        return np.zeros_like(x_hat)
    return 2.0 * (x_hat - x) * (m != 0) / count


def grl_forward(X):
    return X


def grl_backward(upstream_grad, alpha=1.0):
    return -alpha * np.asarray(upstream_grad, dtype=np.float64)


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update of ``params`` from ``grads``.

    Arrays are updated in place; only keys present in ``grads`` are touched.
    Returns ``(params, state)``.
    """
    for name, g in grads.items():
        if name not in params:
            raise ValidationError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValidationError(f"{name}: gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        if not (isinstance(p, np.ndarray) and p.dtype == np.float64 and p.flags.c_contiguous):
            p = params[name] = np.array(p, dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        _backend.adam_update(p, g, state.m[name], state.v[name], state.lr, b1, b2, bc1, bc2, state.eps)
    return params, state
