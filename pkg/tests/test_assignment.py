import numpy as np
import pytest

from oracles import brute_force_assignment_cost
from perceval.metrics import gated_assignment, hungarian
from perceval.metrics.assignment import assignment_cost


def test_single_cell():
    assert hungarian([[3]]) == [(0, 0)]


def test_two_by_two():
    # permutations cost 1+4=5 and 2+2=4
    pairs = hungarian([[1, 2], [2, 4]])
    assert pairs == [(0, 1), (1, 0)]
    assert assignment_cost([[1, 2], [2, 4]], pairs) == 4


def test_empty():
    assert hungarian(np.zeros((0, 3))) == []


@pytest.mark.parametrize("shape", [(6, 6), (3, 7), (7, 2), (1, 5)])
def test_matches_brute_force(rng, shape):
    for _ in range(20):
        cost = rng.integers(-20, 50, size=shape)
        pairs = hungarian(cost)
        assert len(pairs) == min(shape)
        assert len({r for r, _ in pairs}) == len({c for _, c in pairs}) == len(pairs)
        assert assignment_cost(cost, pairs) == brute_force_assignment_cost(cost)


def test_real_valued_costs(rng):
    for _ in range(30):
        cost = rng.normal(size=(5, 5)) * 1e3
        assert assignment_cost(cost, hungarian(cost)) == pytest.approx(brute_force_assignment_cost(cost))


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        hungarian([[np.inf, 1], [1, 1]])


def test_gated_assignment_maximizes_feasible_matches():
    # the cheap pair (0,0) would block both other feasible pairs
    cost = np.array([[0.1, 1.0], [0.5, 9.0]])
    feasible = np.array([[True, True], [True, False]])
    assert gated_assignment(cost, feasible) == [(0, 1), (1, 0)]
    assert gated_assignment(cost, np.zeros_like(feasible)) == []
