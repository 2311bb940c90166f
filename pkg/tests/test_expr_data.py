import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from macd.errors import ParseError, ValidationError
from macd.expr_data import (
    CellTypeLabels,
    ExpressionMatrix,
    align_genes,
    dropout_rate,
    load_expression_matrix,
    load_labels,
    normalize_log1p,
    select_marker_genes,
    write_expression_matrix,
)


def _write(tmp_path, text, name="x.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _mat(values, genes=None, rows=None):
    values = np.asarray(values, dtype=float)
    genes = genes or [f"g{j + 1}" for j in range(values.shape[1])]
    rows = rows or [f"r{i}" for i in range(values.shape[0])]
    return ExpressionMatrix(rows, genes, values)


class TestLoad:
    def test_single_row(self, tmp_path):
        X = load_expression_matrix(_write(tmp_path, "id\tg1\tg2\nA\t0\t3\n"))
        assert X.row_ids == ["A"]
        assert X.gene_names == ["g1", "g2"]
        np.testing.assert_array_equal(X.values, [[0.0, 3.0]])

    def test_non_numeric_names_line(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            load_expression_matrix(_write(tmp_path, "id\tg1\tg2\nA\t1\tx\n"))
        assert exc.value.line == 2
        assert ":2" in str(exc.value)

    def test_duplicate_gene(self, tmp_path):
        with pytest.raises(ParseError, match="duplicate column 'g1'"):
            load_expression_matrix(_write(tmp_path, "id\tg1\tg1\nA\t1\t2\n"))

    def test_duplicate_row_id(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            load_expression_matrix(_write(tmp_path, "id\tg1\nA\t1\nA\t2\n"))
        assert exc.value.line == 3

    def test_ragged_row(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            load_expression_matrix(_write(tmp_path, "id\tg1\tg2\nA\t1\t2\nB\t1\n"))
        assert exc.value.line == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="file not found"):
            load_expression_matrix(tmp_path / "nope.tsv")

    def test_bad_header_sentinel(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            load_expression_matrix(_write(tmp_path, "cell\tg1\nA\t1\n"))
        assert exc.value.line == 1

    def test_negative_value(self, tmp_path):
        with pytest.raises(ParseError):
            load_expression_matrix(_write(tmp_path, "id\tg1\nA\t-1\n"))

    def test_round_trip(self, tmp_path, rng):
        X = _mat(rng.gamma(1.0, size=(5, 4)))
        p = tmp_path / "out.tsv"
        write_expression_matrix(X, p)
        Y = load_expression_matrix(p)
        assert Y.row_ids == X.row_ids and Y.gene_names == X.gene_names
        np.testing.assert_array_equal(Y.values, X.values)

    def test_labels(self, tmp_path):
        labels = load_labels(_write(tmp_path, "id\tcell_type\nc1\tB\nc2\tA\nc3\tB\n"))
        assert labels.assignments == {"c1": "B", "c2": "A", "c3": "B"}
        assert labels.type_order == ["B", "A"]


class TestNormalize:
    def test_unit_scale(self):
        out = normalize_log1p(_mat([[1, 1]]), 2)
        np.testing.assert_allclose(out.values, [[math.log(2), math.log(2)]], rtol=1e-15)

    def test_zero_row(self):
        out = normalize_log1p(_mat([[0, 0], [1, 3]]), 7)
        np.testing.assert_array_equal(out.values[0], [0, 0])

    def test_half_scale(self):
        out = normalize_log1p(_mat([[2, 6]]), 4)
        np.testing.assert_allclose(out.values, [[math.log(2), math.log(4)]], rtol=1e-15)

    @pytest.mark.parametrize("bad", [0, -1.0])
    def test_bad_target(self, bad):
        with pytest.raises(ValidationError):
            normalize_log1p(_mat([[1]]), bad)

    @given(arrays(np.float64, (6, 5), elements=st.floats(0, 1e5)), st.floats(1e-3, 1e6))
    def test_rows_sum_to_target(self, values, target):
        out = normalize_log1p(_mat(values), target)
        scaled = np.expm1(out.values)
        nz = values.sum(axis=1) > 0
        np.testing.assert_allclose(scaled[nz].sum(axis=1), target, rtol=1e-9)
        assert np.all(out.values[~nz] == 0)


def _labels(types):
    return CellTypeLabels({f"r{i}": t for i, t in enumerate(types)})


class TestMarkers:
    def test_block_design(self):
        X = _mat([[5, 0], [4, 0], [0, 3], [0, 6]])
        panel = select_marker_genes(X, _labels(["A", "A", "B", "B"]), 1)
        assert panel.per_type_markers == {"A": ["g1"], "B": ["g2"]}
        assert panel.genes == ["g1", "g2"]

    def test_exhaustion(self):
        X = _mat([[5, 0], [4, 0], [0, 3], [0, 6]])
        panel = select_marker_genes(X, _labels(["A", "A", "B", "B"]), 2)
        assert set(panel.per_type_markers["A"]) == {"g1", "g2"}
        assert set(panel.per_type_markers["B"]) == {"g1", "g2"}
        assert panel.genes == ["g1", "g2"]
        assert not panel.metadata

    def test_top_k_too_large_flags(self):
        X = _mat([[1, 0], [0, 1]])
        panel = select_marker_genes(X, _labels(["A", "B"]), 5)
        assert panel.metadata.get("top_k_exceeds_genes") is True
        assert len(panel.per_type_markers["A"]) == 2

    def test_empty_type(self):
        X = _mat([[1, 0], [0, 1]])
        labels = CellTypeLabels({"r0": "A", "r1": "A", "zz": "B"})
        with pytest.raises(ValidationError, match="no cells"):
            select_marker_genes(X, labels, 1)

    def test_name_tiebreak(self):
        X = ExpressionMatrix(["r0", "r1"], ["zeta", "alpha", "mid"], np.array([[1.0, 1.0, 1.0], [0, 0, 0]]))
        panel = select_marker_genes(X, _labels(["A", "B"]), 3)
        assert panel.per_type_markers["A"] == ["alpha", "mid", "zeta"]

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        X = _mat(np.round(rng.gamma(1.0, size=(30, 6)), 1))
        types = [["A", "B", "C"][i % 3] for i in range(30)]
        labels = _labels(types)
        panel = select_marker_genes(X, labels, 2)
        # oracle: plain loops over cells for each group mean
        expected = {}
        for t in ["A", "B", "C"]:
            scores = []
            for j, g in enumerate(X.gene_names):
                inside = [X.values[i, j] for i in range(30) if types[i] == t]
                outside = [X.values[i, j] for i in range(30) if types[i] != t]
                scores.append((-(sum(inside) / len(inside) - sum(outside) / len(outside)), g))
            expected[t] = [g for _, g in sorted(scores)[:2]]
        assert panel.per_type_markers == expected
        union = []
        for t in ["A", "B", "C"]:
            union += [g for g in expected[t] if g not in union]
        assert panel.genes == union

    def test_row_order_invariance(self, rng):
        X = _mat(rng.gamma(1.0, size=(20, 8)))
        types = [["A", "B"][i % 2] for i in range(20)]
        labels = _labels(types)
        perm = rng.permutation(20)
        Xp = X.take_rows(perm)
        a = select_marker_genes(X, labels, 3)
        b = select_marker_genes(Xp, labels, 3)
        assert a.per_type_markers == b.per_type_markers and a.genes == b.genes


class TestAlign:
    def test_intersection(self):
        a = _mat([[1, 2]], ["g1", "g2"])
        b = _mat([[3, 4]], ["g2", "g3"])
        a2, b2 = align_genes(a, b)
        assert a2.gene_names == b2.gene_names == ["g2"]
        np.testing.assert_array_equal(a2.values, [[2]])
        np.testing.assert_array_equal(b2.values, [[3]])

    def test_identical_sets_canonical_order(self):
        a = _mat([[1, 2, 3]], ["c", "a", "b"])
        b = _mat([[4, 5, 6]], ["a", "b", "c"])
        a2, b2 = align_genes(a, b)
        assert a2.gene_names == ["a", "b", "c"]
        np.testing.assert_array_equal(a2.values, [[2, 3, 1]])
        np.testing.assert_array_equal(b2.values, b.values)

    def test_disjoint(self):
        with pytest.raises(ValidationError, match="no genes"):
            align_genes(_mat([[1]], ["g1"]), _mat([[1]], ["g2"]))

    def test_idempotent(self, rng):
        a = _mat(rng.random((3, 5)), ["e", "b", "a", "d", "c"])
        b = _mat(rng.random((2, 4)), ["a", "x", "e", "c"])
        a2, b2 = align_genes(a, b)
        a3, b3 = align_genes(a2, b2)
        assert a3.gene_names == a2.gene_names
        np.testing.assert_array_equal(a3.values, a2.values)
        np.testing.assert_array_equal(b3.values, b2.values)
        assert a2.row_ids == a.row_ids and b2.row_ids == b.row_ids


class TestDropout:
    @pytest.mark.parametrize(
        "values, expected",
        [([[0, 0], [0, 0]], 1.0), ([[0, 1], [2, 0]], 0.5), ([[1, 2], [3, 4]], 0.0)],
    )
    def test_examples(self, values, expected):
        assert dropout_rate(_mat(values)) == expected

    def test_empty(self):
        with pytest.raises(ValidationError):
            dropout_rate(ExpressionMatrix([], [], np.zeros((0, 0))))

    @settings(max_examples=50)
    @given(arrays(np.float64, (5, 4), elements=st.sampled_from([0.0, 1.0, 2.5])), st.randoms())
    def test_permutation_invariance(self, values, rnd):
        rows, cols = list(range(5)), list(range(4))
        rnd.shuffle(rows)
        rnd.shuffle(cols)
        assert dropout_rate(_mat(values)) == dropout_rate(_mat(values[np.ix_(rows, cols)]))
