"""Per-cell-type agreement metrics between proportion maps, and the
cross-method accuracy score."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .expr_data import format_float, read_tsv_table

SSIM_C1 = 0.01
SSIM_C2 = 0.03
METRICS = ("pcc", "ssim", "rmse", "js")
# larger is better for these; smaller for the rest
HIGHER_IS_BETTER = {"pcc": True, "ssim": True, "rmse": False, "js": False}


@dataclass
class ProportionMatrix:
    spot_ids: list[str]
    type_order: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.spot_ids = list(self.spot_ids)
        self.type_order = list(self.type_order)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.spot_ids), len(self.type_order)):
            raise ValidationError(
                f"proportions shape {self.values.shape} does not match "
                f"{len(self.spot_ids)} spots x {len(self.type_order)} types"
            )
        if len(set(self.spot_ids)) != len(self.spot_ids):
            raise ValidationError("duplicate spot id")
        if len(set(self.type_order)) != len(self.type_order):
            raise ValidationError("duplicate cell type")

    def check_simplex(self, tol=1e-6):
        if np.any(self.values < 0):
            raise ValidationError("negative proportion")
        bad = np.abs(self.values.sum(axis=1) - 1.0) > tol
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValidationError(f"proportions for spot {self.spot_ids[i]!r} do not sum to 1")

    def reorder(self, spot_ids, type_order) -> "ProportionMatrix":
        rpos = {s: i for i, s in enumerate(self.spot_ids)}
        cpos = {t: j for j, t in enumerate(self.type_order)}
        if set(spot_ids) != set(rpos) or len(spot_ids) != len(rpos):
            raise ValidationError("spot ids differ between proportion tables")
        if set(type_order) != set(cpos) or len(type_order) != len(cpos):
            raise ValidationError("cell types differ between proportion tables")
        rows = [rpos[s] for s in spot_ids]
        cols = [cpos[t] for t in type_order]
        return ProportionMatrix(spot_ids, type_order, self.values[np.ix_(rows, cols)])


def read_proportions(path) -> ProportionMatrix:
    types, ids, rows, line_nos = read_tsv_table(path)
    values = np.empty((len(ids), len(types)))
    for i, (parts, lineno) in enumerate(zip(rows, line_nos)):
        try:
            values[i] = [float(p) for p in parts]
        except ValueError:
            raise ParseError("non-numeric proportion", path=path, line=lineno) from None
        if not np.all(np.isfinite(values[i])) or np.any(values[i] < 0):
            raise ParseError("proportions must be finite and nonnegative", path=path, line=lineno)
    return ProportionMatrix(ids, types, values)


def write_proportions(P: ProportionMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["id", *P.type_order]) + "\n")
        for sid, row in zip(P.spot_ids, P.values):
            fh.write(sid + "\t" + "\t".join(format_float(v) for v in row) + "\n")


def _pair(x, x_hat, min_len):
    x = np.asarray(x, dtype=np.float64).ravel()
    x_hat = np.asarray(x_hat, dtype=np.float64).ravel()
    if x.shape != x_hat.shape:
        raise ValidationError(f"length mismatch: {x.size} vs {x_hat.size}")
    if x.size < min_len:
        raise ValidationError(f"need at least {min_len} values, got {x.size}")
    return x, x_hat


def pcc(x, x_hat) -> float:
    """Pearson correlation; 0.0 when either vector is constant."""
    x, x_hat = _pair(x, x_hat, 2)
    xc = x - x.mean()
    yc = x_hat - x_hat.mean()
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom == 0:
        return 0.0
    return float(np.clip(np.dot(xc, yc) / denom, -1.0, 1.0))


def _minmax(v):
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def ssim(x, x_hat) -> float:
    """Global SSIM of the two vectors after each is min-max scaled to [0, 1]."""
    x, x_hat = _pair(x, x_hat, 2)
    a, b = _minmax(x), _minmax(x_hat)
    mu_a, mu_b = a.mean(), b.mean()
    var_a = np.mean((a - mu_a) ** 2)
    var_b = np.mean((b - mu_b) ** 2)
    cov = np.mean((a - mu_a) * (b - mu_b))
    num = (2 * mu_b * mu_a + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_b**2 + mu_a**2 + SSIM_C1) * (var_b + var_a + SSIM_C2)
    return float(num / den)


def rmse(x, x_hat) -> float:
    x, x_hat = _pair(x, x_hat, 1)
    d = x - x_hat
    return float(np.sqrt(np.mean(d * d)))


def js(x, x_hat) -> float:
    """Jensen-Shannon divergence (base 2) of the two vectors normalized to sum 1."""
    x, x_hat = _pair(x, x_hat, 1)
    if np.any(x < 0) or np.any(x_hat < 0):
        raise ValidationError("js: negative entry")
    sx, sy = x.sum(), x_hat.sum()
    if sx <= 0 or sy <= 0:
        raise ValidationError("js: vector sums to zero")
    p, q = x / sx, x_hat / sy
    mid = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return np.sum(a[nz] * np.log2(a[nz] / mid[nz]))

    return float(np.clip(0.5 * kl(p) + 0.5 * kl(q), 0.0, 1.0))


SCALAR_METRICS = {"pcc": pcc, "ssim": ssim, "rmse": rmse, "js": js}


def _average_ranks(values, higher_is_better):
    """Rank 1..N with the best value receiving N; ties share the mean position."""
    v = np.asarray(values, dtype=np.float64)
    if not higher_is_better:
        v = -v
    less = (v[None, :] < v[:, None]).sum(axis=1)
    equal = (v[None, :] == v[:, None]).sum(axis=1)
    return less + (equal + 1) / 2.0


def accuracy_score(metric_table: dict) -> dict:
    """Composite rank score per method from its averaged metrics.

    ``metric_table`` maps method name to a dict with ``pcc``, ``ssim``, ``rmse``
    and ``js``. Each metric is ranked across methods (best gets N), ranks are
    divided by N and the four are averaged.
    """
    methods = list(metric_table)
    if not methods:
        raise ValidationError("accuracy_score needs at least one method")
    for name in methods:
        missing = [k for k in METRICS if k not in metric_table[name]]
        if missing:
            raise ValidationError(f"method {name!r} lacks metrics: {', '.join(missing)}")
    n = len(methods)
    total = np.zeros(n)
    for key in METRICS:
        total += _average_ranks([metric_table[m][key] for m in methods], HIGHER_IS_BETTER[key]) / n
    return {m: float(s / len(METRICS)) for m, s in zip(methods, total)}


@dataclass
class EvaluationReport:
    type_order: list[str]
    per_type: dict[str, dict[str, float]]
    averages: dict[str, float] = field(default_factory=dict)

    def to_tsv(self) -> str:
        lines = ["\t".join(["cell_type", *METRICS])]
        for t in self.type_order:
            lines.append("\t".join([t, *(format_float(self.per_type[t][k]) for k in METRICS)]))
        lines.append("\t".join(["AVERAGE", *(format_float(self.averages[k]) for k in METRICS)]))
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return "  ".join(f"{k}={self.averages[k]:.6f}" for k in METRICS)


def evaluate(pred: ProportionMatrix, truth: ProportionMatrix) -> EvaluationReport:
    """Compute the four metrics per cell type (over spots) and their means."""
    pred = pred.reorder(truth.spot_ids, truth.type_order)
    per_type = {}
    for j, t in enumerate(truth.type_order):
        x, x_hat = truth.values[:, j], pred.values[:, j]
        per_type[t] = {k: fn(x, x_hat) for k, fn in SCALAR_METRICS.items()}
    averages = {k: float(np.mean([per_type[t][k] for t in truth.type_order])) for k in METRICS}
    return EvaluationReport(list(truth.type_order), per_type, averages)
