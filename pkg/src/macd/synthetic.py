"""Synthetic single-cell references with block-structured marker genes."""

import numpy as np

from .expr_data import CellTypeLabels, ExpressionMatrix


def block_reference(n_types=4, cells_per_type=200, n_genes=120, block_size=30,
                    high_mean=10.0, low_mean=0.5, seed=0):
    """Poisson counts where type ``k`` is highly expressed on genes
    ``[k*block_size, (k+1)*block_size)`` and at background elsewhere.

    Per-cell library size varies by a lognormal factor so normalization has
    work to do.
    """
    if n_types * block_size > n_genes:
        raise ValueError("blocks do not fit in the gene count")
    rng = np.random.default_rng(seed)
    n_cells = n_types * cells_per_type
    types = np.repeat(np.arange(n_types), cells_per_type)
    means = np.full((n_types, n_genes), low_mean)
    for k in range(n_types):
        means[k, k * block_size:(k + 1) * block_size] = high_mean
    size = rng.lognormal(0.0, 0.25, size=(n_cells, 1))
    counts = rng.poisson(means[types] * size).astype(np.float64)
    width = len(str(n_cells - 1))
    ids = [f"cell{i:0{width}d}" for i in range(n_cells)]
    genes = [f"g{j:03d}" for j in range(n_genes)]
    names = [f"type{k}" for k in range(n_types)]
    labels = CellTypeLabels({c: names[t] for c, t in zip(ids, types)}, names)
    return ExpressionMatrix(ids, genes, counts), labels
