"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--skip-train]

Per-kernel timings call both modules directly at training-sized shapes. The
end-to-end number runs one short training job per backend in a subprocess,
since the backend is fixed at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from macd import _kernels_py

try:
    from macd import _kernels
except ImportError:
    _kernels = None

TRAIN_SNIPPET = """
import time
from macd import BACKEND
from macd.model import MacdConfig, train
from macd.pipeline import prepare_training_data
from macd.pseudospot_sim import PseudoSpotConfig, simulate_pseudospots
from macd.synthetic import block_reference

sc, labels = block_reference(seed=0)
sim = simulate_pseudospots(sc, labels, PseudoSpotConfig(2000, 2, 10, seed=1))
held = simulate_pseudospots(sc, labels, PseudoSpotConfig(500, 2, 10, seed=2), id_prefix="held")
real, sim, _ = prepare_training_data(sc, labels, held.expression, sim)
t0 = time.perf_counter()
train(real, sim, MacdConfig(epochs=3, batch_size=256))
print(BACKEND, time.perf_counter() - t0)
"""


def cases(rng):
    n, d, g = 256, 512, 120
    x = rng.normal(size=(n, d))
    dy = rng.normal(size=(n, d))
    gamma, beta = rng.normal(size=d), rng.normal(size=d)
    xr, xh = rng.random((n, g)), rng.random((n, g))
    m = (rng.random((n, g)) < 0.3).astype(np.float64)
    cells = rng.random((800, g))
    counts = rng.integers(2, 11, size=4000)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.intp)
    indices = rng.integers(0, 800, size=indptr[-1]).astype(np.intp)
    p = rng.normal(size=g * d)
    grad = rng.normal(size=g * d)
    return {
        "leaky_relu_fwd": lambda k: k.leaky_relu_fwd(x, 0.01),
        "leaky_relu_bwd": lambda k: k.leaky_relu_bwd(x, dy, 0.01),
        "bn_train_fwd": lambda k: k.bn_train_fwd(x, gamma, beta, 1e-5),
        "bn_bwd": lambda k: k.bn_bwd(x, dy, gamma, 1e-5),
        "masked_sq_err": lambda k: k.masked_sq_err(xh, xr, m),
        "spot_sum": lambda k: k.spot_sum(cells, indptr, indices),
        # in place, so each call mutates its own copies
        "adam_update": lambda k, s=(p.copy(), np.zeros_like(p), np.zeros_like(p)): k.adam_update(
            s[0], grad, s[1], s[2], 1e-3, 0.9, 0.999, 0.1, 0.001, 1e-8
        ),
    }


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=5, repeat=repeat)) / 5


def train_time(pure):
    env = dict(os.environ, MACD_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True, check=True)
    backend, seconds = out.stdout.split()
    return backend, float(seconds)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args(argv)

    if _kernels is None:
        print("compiled kernels not built; only the numpy fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases(rng).items():
        t_py = best_of(lambda: fn(_kernels_py), args.repeat)
        t_c = best_of(lambda: fn(_kernels), args.repeat)
        print(f"{name:<16} {t_py * 1e3:10.3f} {t_c * 1e3:10.3f} {t_py / t_c:7.2f}x")

    if not args.skip_train:
        _, t_py = train_time(pure=True)
        _, t_c = train_time(pure=False)
        print(f"\ntraining, 3 epochs on 2000 spots: numpy {t_py:.2f}s, cython {t_c:.2f}s ({t_py / t_c:.2f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
