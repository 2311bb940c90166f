"""Expression matrices: TSV I/O, normalization, marker panels and gene alignment."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "ExpressionMatrix",
    "CellTypeLabels",
    "GenePanel",
    "load_expression_matrix",
    "write_expression_matrix",
    "load_labels",
    "read_tsv_table",
    "format_float",
    "normalize_log1p",
    "select_marker_genes",
    "align_genes",
    "dropout_rate",
]


def _check_unique(items, what):
    seen = set()
    for item in items:
        if item in seen:
            raise ValidationError(f"duplicate {what}: {item!r}")
        seen.add(item)


@dataclass
class ExpressionMatrix:
    """Rows are cells or spots, columns are genes. Values are nonnegative."""

    row_ids: list[str]
    gene_names: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.row_ids = list(self.row_ids)
        self.gene_names = list(self.gene_names)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"values must be 2-D, got shape {self.values.shape}")
        n, g = self.values.shape
        if len(self.row_ids) != n:
            raise ValidationError(f"{len(self.row_ids)} row ids for {n} rows")
        if len(self.gene_names) != g:
            raise ValidationError(f"{len(self.gene_names)} gene names for {g} columns")
        _check_unique(self.row_ids, "row id")
        _check_unique(self.gene_names, "gene name")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("expression values must be finite")
        if np.any(self.values < 0):
            raise ValidationError("expression values must be nonnegative")

    @property
    def shape(self):
        return self.values.shape

    def take_genes(self, genes) -> "ExpressionMatrix":
        """Column subset in the given order. Unknown genes raise ValidationError."""
        index = {g: j for j, g in enumerate(self.gene_names)}
        missing = [g for g in genes if g not in index]
        if missing:
            raise ValidationError(f"genes not present: {', '.join(missing[:20])}")
        cols = [index[g] for g in genes]
        return ExpressionMatrix(self.row_ids, list(genes), self.values[:, cols])

    def take_rows(self, rows) -> "ExpressionMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return ExpressionMatrix([self.row_ids[i] for i in rows], self.gene_names, self.values[rows])


@dataclass
class CellTypeLabels:
    assignments: dict[str, str]
    type_order: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.assignments = dict(self.assignments)
        if not self.type_order:
            # first-appearance order
            self.type_order = list(dict.fromkeys(self.assignments.values()))
        self.type_order = list(self.type_order)
        _check_unique(self.type_order, "cell type")
        if set(self.type_order) != set(self.assignments.values()):
            raise ValidationError("type_order must cover exactly the distinct labels")

    def codes_for(self, row_ids) -> np.ndarray:
        """Integer type index (into type_order) for each row id."""
        pos = {t: k for k, t in enumerate(self.type_order)}
        missing = [r for r in row_ids if r not in self.assignments]
        if missing:
            raise ValidationError(f"{len(missing)} cells have no label, e.g. {missing[0]!r}")
        return np.array([pos[self.assignments[r]] for r in row_ids], dtype=np.intp)


@dataclass
class GenePanel:
    genes: list[str]
    per_type_markers: dict[str, list[str]]
    # e.g. {"top_k_exceeds_genes": True}
    metadata: dict = field(default_factory=dict)


def format_float(x: float) -> str:
    # shortest round-trip repr keeps outputs byte-stable
    x = float(x)
    if x == 0.0:
        return "0"
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def read_tsv_table(path, first_header="id"):
    """Read a tab-separated table with an ``id`` header sentinel.

    Returns ``(columns, row_ids, rows, line_numbers)``; ``rows`` holds the
    string fields after the id, ``line_numbers`` the 1-based source line of each.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ParseError("file not found", path=path)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc.reason})", path=path) from exc
    if not lines or not lines[0].strip():
        raise ParseError("empty file", path=path, line=1)
    header = lines[0].split("\t")
    if header[0] != first_header:
        raise ParseError(f"first header cell must be {first_header!r}, got {header[0]!r}", path=path, line=1)
    columns = header[1:]
    seen = set()
    for name in columns:
        if name in seen:
            raise ParseError(f"duplicate column {name!r}", path=path, line=1)
        seen.add(name)
    row_ids, rows, line_nos = [], [], []
    ids_seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, got {len(parts)}", path=path, line=lineno
            )
        rid = parts[0]
        if rid in ids_seen:
            raise ParseError(f"duplicate id {rid!r}", path=path, line=lineno)
        ids_seen.add(rid)
        row_ids.append(rid)
        rows.append(parts[1:])
        line_nos.append(lineno)
    return columns, row_ids, rows, line_nos


def _parse_numeric(rows, line_nos, columns, path):
    values = np.empty((len(rows), len(columns)), dtype=np.float64)
    for i, (parts, lineno) in enumerate(zip(rows, line_nos)):
        try:
            values[i] = [float(p) for p in parts]
        except ValueError:
            bad = next(p for p in parts if not _is_float(p))
            raise ParseError(f"non-numeric value {bad!r}", path=path, line=lineno) from None
        if not np.all(np.isfinite(values[i])):
            raise ParseError("non-finite value", path=path, line=lineno)
    return values


def _is_float(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_expression_matrix(path, fmt="tsv") -> ExpressionMatrix:
    """Load an expression TSV (``id<TAB>gene...`` header, one row per cell/spot)."""
    if fmt != "tsv":
        raise ValidationError(f"unsupported format {fmt!r}")
    genes, row_ids, rows, line_nos = read_tsv_table(path)
    values = _parse_numeric(rows, line_nos, genes, path)
    bad = np.argwhere(values < 0)
    if bad.size:
        raise ParseError("negative expression value", path=path, line=line_nos[bad[0][0]])
    return ExpressionMatrix(row_ids, genes, values.reshape(len(row_ids), len(genes)))


def write_expression_matrix(X: ExpressionMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["id", *X.gene_names]) + "\n")
        for rid, row in zip(X.row_ids, X.values):
            fh.write(rid + "\t" + "\t".join(format_float(v) for v in row) + "\n")


def load_labels(path) -> CellTypeLabels:
    """Load a labels TSV with header ``id<TAB>cell_type``."""
    columns, row_ids, rows, line_nos = read_tsv_table(path)
    if len(columns) != 1:
        raise ParseError("labels file must have exactly two columns", path=path, line=1)
    assignments = {}
    for rid, parts, lineno in zip(row_ids, rows, line_nos):
        label = parts[0].strip()
        if not label:
            raise ParseError("empty cell type", path=path, line=lineno)
        assignments[rid] = label
    if not assignments:
        raise ParseError("no labels", path=path)
    return CellTypeLabels(assignments)


def normalize_log1p(X: ExpressionMatrix, target_sum: float = 1e4) -> ExpressionMatrix:
    """Scale each row to ``target_sum`` then apply ``ln(1 + x)``. All-zero rows stay zero."""
    if not target_sum > 0:
        raise ValidationError(f"target_sum must be positive, got {target_sum}")
    totals = X.values.sum(axis=1, keepdims=True)
    # divide first so tiny totals cannot overflow the scale factor
    frac = np.divide(X.values, totals, out=np.zeros_like(X.values), where=totals > 0)
    return ExpressionMatrix(X.row_ids, X.gene_names, np.log1p(frac * target_sum))


def select_marker_genes(sc: ExpressionMatrix, labels: CellTypeLabels, top_k: int = 200) -> GenePanel:
    """One-vs-rest mean-difference markers per cell type.

    Genes are ranked by ``mean(in type) - mean(rest)``, descending, ties broken by
    gene name. The panel is the union of per-type lists in ``type_order`` then
    rank order.
    """
    if top_k < 1:
        raise ValidationError("top_k must be positive")
    codes = labels.codes_for(sc.row_ids)
    n_genes = len(sc.gene_names)
    metadata = {}
    if top_k > n_genes:
        metadata["top_k_exceeds_genes"] = True
        top_k = n_genes
    # rank by name once; a stable sort on -score then keeps name order among ties
    name_rank = np.argsort(np.array(sc.gene_names, dtype=object), kind="stable")
    total = sc.values.sum(axis=0)
    n = len(codes)
    markers = {}
    for k, cell_type in enumerate(labels.type_order):
        in_type = codes == k
        n_in = int(in_type.sum())
        if n_in == 0:
            raise ValidationError(f"cell type {cell_type!r} has no cells")
        sum_in = sc.values[in_type].sum(axis=0)
        mean_in = sum_in / n_in
        # rest is empty only with a single type; score then is the in-type mean
        mean_out = (total - sum_in) / (n - n_in) if n > n_in else np.zeros(n_genes)
        score = mean_in - mean_out
        order = name_rank[np.argsort(-score[name_rank], kind="stable")]
        markers[cell_type] = [sc.gene_names[j] for j in order[:top_k]]
    genes = list(dict.fromkeys(g for t in labels.type_order for g in markers[t]))
    return GenePanel(genes, markers, metadata)


def align_genes(a: ExpressionMatrix, b: ExpressionMatrix):
    """Restrict both matrices to their shared genes, in lexicographic order."""
    shared = sorted(set(a.gene_names) & set(b.gene_names))
    if not shared:
        raise ValidationError("matrices share no genes")
    return a.take_genes(shared), b.take_genes(shared)


def dropout_rate(X: ExpressionMatrix) -> float:
    """Fraction of entries that are exactly zero."""
    size = X.values.size
    if size == 0:
        raise ValidationError("dropout rate of an empty matrix is undefined")
    return float(np.count_nonzero(X.values == 0)) / size
