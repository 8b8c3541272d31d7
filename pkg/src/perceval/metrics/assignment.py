"""Minimum-cost bipartite assignment (Kuhn-Munkres with potentials)."""

from __future__ import annotations

import numpy as np


def hungarian(cost) -> list[tuple[int, int]]:
    """Solve the rectangular linear assignment problem.

    Args:
        cost: ``n x m`` array-like of finite costs.

    Returns:
        ``min(n, m)`` (row, col) pairs sorted by row whose total cost is minimal.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    transposed = n > m
    if transposed:
        cost = cost.T
        n, m = m, n

    # Shortest augmenting paths; rows 1..n, columns 1..m, column 0 is a sentinel.
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    row_of = np.zeros(m + 1, dtype=int)  # row assigned to each column, 0 = free
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        way = np.zeros(m + 1, dtype=int)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[row_of[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1

    pairs = [(int(row_of[j]) - 1, j - 1) for j in range(1, m + 1) if row_of[j]]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


def assignment_cost(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=float)
    return float(sum(cost[r, c] for r, c in pairs))


def gated_assignment(cost: np.ndarray, feasible: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-cardinality assignment over feasible pairs, then minimum cost.

    Infeasible pairs get a penalty larger than any feasible total, so the
    solver only uses them when nothing else is left; they are dropped from the
    result.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0 or not feasible.any():
        return []
    finite = cost[feasible]
    span = float(np.abs(finite).max()) + 1.0
    penalty = span * (min(cost.shape) + 1) * 2.0
    padded = np.where(feasible, cost, penalty)
    return [(r, c) for r, c in hungarian(padded) if feasible[r, c]]
