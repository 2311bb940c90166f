"""Preprocessing shared by the CLI and the end-to-end checks."""

from .expr_data import align_genes, normalize_log1p, select_marker_genes
from .pseudospot_sim import SimulatedST


def prepare_training_data(sc, labels, st, sim, top_k=200, target_sum=1e4):
    """Marker panel from the reference, restrict simulated and real data to the
    panel genes present in both, then normalize each identically.

    Returns ``(real_norm, sim_norm, panel)``.
    """
    panel = select_marker_genes(normalize_log1p(sc, target_sum), labels, top_k)
    sim_expr, st_expr = align_genes(sim.expression.take_genes(panel.genes), st)
    sim_norm = SimulatedST(normalize_log1p(sim_expr, target_sum), sim.proportions, sim.composition)
    return normalize_log1p(st_expr, target_sum), sim_norm, panel


def prepare_inference_data(st, gene_order, target_sum=1e4):
    """Restrict to the model's genes (in model order) and normalize."""
    return normalize_log1p(st.take_genes(gene_order), target_sum)
