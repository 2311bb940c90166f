"""Pseudo-spot simulation from a labelled single-cell reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ValidationError
from .expr_data import CellTypeLabels, ExpressionMatrix
from .metrics import ProportionMatrix


@dataclass
class PseudoSpotConfig:
    n_spots: int = 8000
    cells_per_spot_min: int = 2
    cells_per_spot_max: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_spots < 1:
            raise ValidationError("n_spots must be at least 1")
        if not 1 <= self.cells_per_spot_min <= self.cells_per_spot_max:
            raise ValidationError(
                f"need 1 <= cells_per_spot_min <= cells_per_spot_max, got "
                f"{self.cells_per_spot_min}, {self.cells_per_spot_max}"
            )
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")


@dataclass
class SimulatedST:
    expression: ExpressionMatrix
    proportions: ProportionMatrix
    composition: list[list[str]]


def draw_compositions(n_cells, cfg: PseudoSpotConfig):
    """Replay the seeded draw sequence. Returns ``(indptr, cell_indices)`` in CSR form.

    For every spot in turn: one draw of the cell count k, then k uniform cell
    indices with replacement.
    """
    rng = np.random.default_rng(cfg.seed)
    indptr = np.zeros(cfg.n_spots + 1, dtype=np.intp)
    chunks = []
    for i in range(cfg.n_spots):
        k = int(rng.integers(cfg.cells_per_spot_min, cfg.cells_per_spot_max, endpoint=True))
        chunks.append(rng.integers(0, n_cells, size=k))
        indptr[i + 1] = indptr[i] + k
    return indptr, np.concatenate(chunks).astype(np.intp)


def build_spots(sc: ExpressionMatrix, labels: CellTypeLabels, indptr, cell_idx, id_prefix="spot"):
    """Sum the chosen cells per spot and count their types."""
    codes = labels.codes_for(sc.row_ids)
    n_spots = len(indptr) - 1
    n_types = len(labels.type_order)
    expression = _backend.spot_sum(sc.values, indptr, cell_idx)
    spot_of = np.repeat(np.arange(n_spots), np.diff(indptr))
    counts = np.zeros((n_spots, n_types))
    np.add.at(counts, (spot_of, codes[cell_idx]), 1.0)
    props = counts / np.diff(indptr)[:, None]
    width = len(str(n_spots - 1))
    ids = [f"{id_prefix}{i:0{width}d}" for i in range(n_spots)]
    composition = [[sc.row_ids[c] for c in cell_idx[indptr[i] : indptr[i + 1]]] for i in range(n_spots)]
    return SimulatedST(
        ExpressionMatrix(ids, sc.gene_names, expression),
        ProportionMatrix(ids, labels.type_order, props),
        composition,
    )


def simulate_pseudospots(sc: ExpressionMatrix, labels: CellTypeLabels, cfg: PseudoSpotConfig, id_prefix="spot") -> SimulatedST:
    """Simulate ``cfg.n_spots`` spots, each the summed raw counts of k cells drawn
    uniformly with replacement, k uniform in [min, max]. Deterministic in
    ``(cfg.seed, row order of sc)``."""
    if sc.values.shape[0] == 0:
        raise ValidationError("single-cell reference is empty")
    labels.codes_for(sc.row_ids)
    indptr, cell_idx = draw_compositions(sc.values.shape[0], cfg)
    return build_spots(sc, labels, indptr, cell_idx, id_prefix)
