"""Select the compiled kernels when available, else the numpy fallback.

Set ``MACD_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("MACD_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def leaky_relu_fwd(x, slope):
    return _impl.leaky_relu_fwd(_c(x), float(slope))


def leaky_relu_bwd(x, dy, slope):
    return _impl.leaky_relu_bwd(_c(x), _c(dy), float(slope))


def bn_train_fwd(x, gamma, beta, eps):
    return _impl.bn_train_fwd(_c(x), _c(gamma), _c(beta), float(eps))


def bn_bwd(x, dy, gamma, eps):
    return _impl.bn_bwd(_c(x), _c(dy), _c(gamma), float(eps))


def masked_sq_err(xhat, x, m):
    s, count = _impl.masked_sq_err(_c(xhat), _c(x), _c(m))
    return float(s), int(count)


def spot_sum(values, indptr, indices):
    return _impl.spot_sum(
        _c(values), np.ascontiguousarray(indptr, dtype=np.intp), np.ascontiguousarray(indices, dtype=np.intp)
    )


def adam_update(p, g, m, v, lr, beta1, beta2, bc1, bc2, eps):
    """Update contiguous float64 arrays ``p``, ``m``, ``v`` in place."""
    _impl.adam_update(
        p.reshape(-1), _c(g).reshape(-1), m.reshape(-1), v.reshape(-1),
        float(lr), float(beta1), float(beta2), float(bc1), float(bc2), float(eps),
    )
