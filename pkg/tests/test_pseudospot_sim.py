import numpy as np
import pytest

from macd.errors import ValidationError
from macd.expr_data import CellTypeLabels, ExpressionMatrix
from macd.pseudospot_sim import PseudoSpotConfig, build_spots, simulate_pseudospots


@pytest.fixture
def reference():
    rng = np.random.default_rng(3)
    ids = [f"c{i}" for i in range(12)]
    X = ExpressionMatrix(ids, ["g1", "g2", "g3"], rng.poisson(4.0, size=(12, 3)).astype(float))
    labels = CellTypeLabels({c: ("A" if i < 3 else "B") for i, c in enumerate(ids)}, ["A", "B"])
    return X, labels


def test_single_cell_spot(reference):
    X, labels = reference
    sim = simulate_pseudospots(X, labels, PseudoSpotConfig(1, 1, 1, seed=5))
    (cell,) = sim.composition[0]
    row = X.row_ids.index(cell)
    expected = [1.0, 0.0] if labels.assignments[cell] == "A" else [0.0, 1.0]
    np.testing.assert_array_equal(sim.proportions.values[0], expected)
    np.testing.assert_array_equal(sim.expression.values[0], X.values[row])


def test_forced_two_cell_spot(reference):
    X, labels = reference
    sim = build_spots(X, labels, np.array([0, 2]), np.array([0, 5]))
    np.testing.assert_array_equal(sim.proportions.values, [[0.5, 0.5]])
    np.testing.assert_array_equal(sim.expression.values[0], X.values[0] + X.values[5])


def test_type_frequency_law_of_large_numbers(reference):
    X, labels = reference  # 3 A cells, 9 B cells
    cfg = PseudoSpotConfig(10000, 5, 5, seed=7)
    sim = simulate_pseudospots(X, labels, cfg)
    # independent replay of the documented draw sequence
    rng = np.random.default_rng(7)
    is_a = np.array([labels.assignments[c] == "A" for c in X.row_ids])
    total_a = 0
    for _ in range(cfg.n_spots):
        k = rng.integers(5, 5, endpoint=True)
        total_a += is_a[rng.integers(0, 12, size=k)].sum()
    replay = total_a / (5 * cfg.n_spots)
    agg = sim.proportions.values.mean(axis=0)
    assert agg[0] == pytest.approx(replay, abs=1e-12)
    assert abs(agg[0] - 0.25) < 0.01 and abs(agg[1] - 0.75) < 0.01


def test_invariants(reference):
    X, labels = reference
    cfg = PseudoSpotConfig(300, 2, 6, seed=11)
    sim = simulate_pseudospots(X, labels, cfg)
    P = sim.proportions.values
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
    index = {c: i for i, c in enumerate(X.row_ids)}
    for i, cells in enumerate(sim.composition):
        k = len(cells)
        assert 2 <= k <= 6
        np.testing.assert_allclose(P[i] * k, np.round(P[i] * k), atol=1e-12)
        np.testing.assert_allclose(sim.expression.values[i], X.values[[index[c] for c in cells]].sum(axis=0), atol=1e-9)


def test_bit_identical_rerun(reference):
    X, labels = reference
    cfg = PseudoSpotConfig(200, 2, 10, seed=99)
    a = simulate_pseudospots(X, labels, cfg)
    b = simulate_pseudospots(X, labels, cfg)
    assert a.expression.values.tobytes() == b.expression.values.tobytes()
    assert a.proportions.values.tobytes() == b.proportions.values.tobytes()
    assert a.composition == b.composition


def test_errors(reference):
    X, labels = reference
    with pytest.raises(ValidationError):
        PseudoSpotConfig(10, 3, 2)
    with pytest.raises(ValidationError):
        PseudoSpotConfig(0, 1, 1)
    empty = ExpressionMatrix([], ["g1", "g2", "g3"], np.zeros((0, 3)))
    with pytest.raises(ValidationError, match="empty"):
        simulate_pseudospots(empty, labels, PseudoSpotConfig(1, 1, 1))
