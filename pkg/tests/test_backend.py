import numpy as np
import pytest

from macd import _backend, _kernels_py

compiled = pytest.importorskip("macd._kernels", reason="compiled kernels not built")


@pytest.fixture(params=range(3))
def data(request):
    rng = np.random.default_rng(request.param)
    return rng, rng.normal(size=(37, 23)), rng.normal(size=(37, 23))


def test_backend_selected():
    assert _backend.BACKEND in ("cython", "python")


def test_leaky_relu(data):
    _, x, dy = data
    np.testing.assert_array_equal(compiled.leaky_relu_fwd(x, 0.03), _kernels_py.leaky_relu_fwd(x, 0.03))
    np.testing.assert_array_equal(compiled.leaky_relu_bwd(x, dy, 0.03), _kernels_py.leaky_relu_bwd(x, dy, 0.03))


def test_batchnorm(data):
    rng, x, dy = data
    gamma, beta = rng.normal(size=(2, 23))
    for a, b in zip(compiled.bn_train_fwd(x, gamma, beta, 1e-5), _kernels_py.bn_train_fwd(x, gamma, beta, 1e-5)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)
    for a, b in zip(compiled.bn_bwd(x, dy, gamma, 1e-5), _kernels_py.bn_bwd(x, dy, gamma, 1e-5)):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_masked_sq_err(data):
    rng, x, y = data
    m = (rng.random(x.shape) < 0.3).astype(float)
    s1, c1 = compiled.masked_sq_err(x, y, m)
    s2, c2 = _kernels_py.masked_sq_err(x, y, m)
    assert c1 == c2
    assert s1 == pytest.approx(s2, rel=1e-12)


def test_spot_sum(data):
    rng, x, _ = data
    indptr = np.array([0, 3, 3, 8], dtype=np.intp)
    idx = rng.integers(0, x.shape[0], size=8).astype(np.intp)
    np.testing.assert_allclose(compiled.spot_sum(x, indptr, idx), _kernels_py.spot_sum(x, indptr, idx), rtol=1e-14)


def test_adam_update(data):
    rng, p, g = data
    states = []
    for mod in (compiled, _kernels_py):
        pp, m, v = p.copy().ravel(), np.zeros(p.size), np.zeros(p.size)
        for _ in range(3):
            mod.adam_update(pp, g.ravel(), m, v, 0.01, 0.9, 0.999, 0.1, 0.001, 1e-8)
        states.append((pp, m, v))
    for a, b in zip(*states):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)
