"""Pure-numpy implementations of the fused kernels.

Same signatures as the compiled ``_kernels`` extension; used when the
extension is not built or ``MACD_PURE_PYTHON=1`` is set.
"""

import numpy as np


def leaky_relu_fwd(x, slope):
    return np.where(x >= 0, x, slope * x)


def leaky_relu_bwd(x, dy, slope):
    return np.where(x >= 0, dy, slope * dy)


def bn_train_fwd(x, gamma, beta, eps):
    """Batch-statistics normalization. Returns ``(y, mean, biased_var)``."""
    mean = x.mean(axis=0)
    xc = x - mean
    var = (xc * xc).mean(axis=0)
    y = xc * (gamma / np.sqrt(var + eps)) + beta
    return y, mean, var


def bn_bwd(x, dy, gamma, eps):
    """Backward of training-mode batch norm. Returns ``(dx, dgamma, dbeta)``."""
    n = x.shape[0]
    mean = x.mean(axis=0)
    xc = x - mean
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    dbeta = dy.sum(axis=0)
    dgamma = (dy * xhat).sum(axis=0)
    dx = (gamma * inv / n) * (n * dy - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


def masked_sq_err(xhat, x, m):
    """Sum of squared differences over entries with ``m != 0``, and their count."""
    sel = m != 0
    d = (xhat - x)[sel]
    return float(np.dot(d, d)), int(np.count_nonzero(sel))


def spot_sum(values, indptr, indices):
    """Row ``i`` of the result is the sum of ``values[indices[indptr[i]:indptr[i+1]]]``."""
    n = len(indptr) - 1
    out = np.zeros((n, values.shape[1]), dtype=np.float64)
    spot_of = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, spot_of, values[indices])
    return out


def adam_update(p, g, m, v, lr, beta1, beta2, bc1, bc2, eps):
    """In-place Adam moment and parameter update for one flat array."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
