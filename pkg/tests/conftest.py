import numpy as np
import pytest

from macd.model import MacdConfig, MacdParams


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of the
    array ``x`` (perturbed in place and restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def tiny_config(**kw):
    base = dict(latent_dim=8, encoder_hidden=10, decoder_hidden=(9, 11), head_hidden=6, batch_size=16, epochs=3)
    base.update(kw)
    return MacdConfig(**base)


def tiny_params(n_genes=7, n_types=3, seed=0, **kw):
    cfg = tiny_config(seed=seed, **kw)
    return MacdParams.init(n_genes, n_types, cfg), cfg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_dataset(root, n_types=3, cells_per_type=20, n_genes=24, block_size=8, st_spots=30, seed=0):
    """Synthetic sc reference, labels and an ST matrix (simulated spots from a
    different seed) as TSV files under ``root``. Returns a dict of paths and
    the held-out truth proportions path."""
    from macd.expr_data import write_expression_matrix
    from macd.metrics import write_proportions
    from macd.pseudospot_sim import PseudoSpotConfig, simulate_pseudospots
    from macd.synthetic import block_reference

    sc, labels = block_reference(n_types, cells_per_type, n_genes, block_size, seed=seed)
    st = simulate_pseudospots(sc, labels, PseudoSpotConfig(st_spots, 2, 6, seed=seed + 1000), id_prefix="st")
    paths = {k: str(root / f"{k}.tsv") for k in ("sc_expression", "sc_labels", "st_expression", "st_truth")}
    write_expression_matrix(sc, paths["sc_expression"])
    with open(paths["sc_labels"], "w", encoding="utf-8") as fh:
        fh.write("id\tcell_type\n")
        for c in sc.row_ids:
            fh.write(f"{c}\t{labels.assignments[c]}\n")
    write_expression_matrix(st.expression, paths["st_expression"])
    write_proportions(st.proportions, paths["st_truth"])
    return paths


def write_config(path, **values):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# test run\n")
        for k, v in values.items():
            fh.write(f"{k} = {v}\n")
    return str(path)


SMALL_MODEL = dict(
    latent_dim=8, encoder_hidden=16, decoder_hidden="16,16", head_hidden=8,
    batch_size=32, epochs=2, top_k=6, n_spots=80,
)
