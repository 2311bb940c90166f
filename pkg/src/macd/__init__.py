"""Cell-type deconvolution of spatial transcriptomics spots with a masked
adversarial network trained on simulated pseudo-spots."""

from ._backend import BACKEND
from .errors import MacdError, NumericalError, ParseError, ValidationError
from .expr_data import (
    CellTypeLabels,
    ExpressionMatrix,
    GenePanel,
    align_genes,
    dropout_rate,
    load_expression_matrix,
    load_labels,
    normalize_log1p,
    select_marker_genes,
    write_expression_matrix,
)
from .metrics import (
    EvaluationReport,
    ProportionMatrix,
    accuracy_score,
    evaluate,
    js,
    pcc,
    read_proportions,
    rmse,
    ssim,
    write_proportions,
)
from .model import MacdConfig, MacdParams, TrainedModel, apply_mask, predict, train
from .pseudospot_sim import PseudoSpotConfig, SimulatedST, simulate_pseudospots

__version__ = "0.1.0"
