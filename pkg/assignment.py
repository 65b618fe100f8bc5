# assignment.py

"""
Minimum-cost bipartite assignment on rectangular cost matrices.

solve_assignment hands the core search to scipy's linear_sum_assignment and
then works on the square form of the problem (zero-cost rows fill in the
unused columns). Column potentials come from a Bellman-Ford pass over the
alternating graph of the optimum; edges with zero reduced cost are exactly the
edges any optimal assignment may use. When no zero-cost alternating cycle
reaches a real row the optimum is unique and is returned as is. Otherwise the
rows are fixed in order, each rotated onto the smallest column an equal-cost
cycle can give it, so ties resolve to the lexicographically smallest map.
"""

import itertools
import logging
from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from errors import InputError

logger = logging.getLogger(__name__)

ORACLE_MAX_COLS = 9

CostMatrix = Union[np.ndarray, Sequence[Sequence[float]]]


@dataclass(frozen=True)
class Assignment:
    """Row -> column map (map[row] = column) and its total cost."""

    map: Tuple[int, ...]
    total_cost: float

    def pairs(self) -> List[Tuple[int, int]]:
        return list(enumerate(self.map))

    def __len__(self) -> int:
        return len(self.map)


def as_cost_matrix(m: CostMatrix) -> np.ndarray:
    """
    Convert and check a cost matrix.

    Raises:
        InputError: If the matrix is not 2-D, has more rows than columns,
            or holds a non-finite entry
    """
    cost = np.asarray(m, dtype=np.float64)
    if cost.ndim != 2:
        raise InputError(f"cost matrix must be 2-D, got shape {cost.shape}")
    rows, cols = cost.shape
    if rows > cols:
        raise InputError(f"more rows than columns ({rows} > {cols})")
    if not np.isfinite(cost).all():
        raise InputError("non-finite cost entry")
    return cost


def _tie_tolerance(cost: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(cost).max())) if cost.size else 1.0
    return 1e-12 * scale * max(1, cost.shape[0])


def _square_optimum(cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Optimal R x C assignment extended to the C x C problem with zero rows.

    Returns:
        (square, sigma): the padded matrix and its row -> column permutation
    """
    rows, cols = cost.shape
    _, col_ind = linear_sum_assignment(cost)
    sigma = np.empty(cols, dtype=np.intp)
    sigma[:rows] = col_ind
    free = np.ones(cols, dtype=bool)
    free[col_ind] = False
    sigma[rows:] = np.flatnonzero(free)
    square = np.zeros((cols, cols))
    square[:rows] = cost
    return square, sigma


def _column_potentials(square: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """
    Potentials v with square[i, j] - v[j] >= square[i, sigma[i]] - v[sigma[i]].

    Shortest distances from a virtual source over the edges
    sigma[i] -> j of weight square[i, j] - square[i, sigma[i]]; an optimal
    sigma leaves no negative cycle.
    """
    n = square.shape[0]
    own = square[np.arange(n), sigma]
    stop = 1e-12 * max(1.0, float(np.abs(square).max()))
    v = np.zeros(n)
    for _ in range(n + 1):
        relaxed = np.minimum(v, ((v[sigma] - own)[:, None] + square).min(axis=0))
        improved = bool((relaxed < v - stop).any())
        v = relaxed
        if not improved:
            break
    return v


def _alternating_path(
    tight_cols: List[np.ndarray],
    sigma: np.ndarray,
    owner: np.ndarray,
    fixed: np.ndarray,
    start: int,
    target: int,
) -> Optional[List[int]]:
    """
    Rows start -> ... -> r where each row can take the next row's column on a
    tight edge and r can take target's column. None if no such path exists.
    """
    goal = sigma[target]
    parent = {start: -1}
    queue = deque([start])
    while queue:
        r = queue.popleft()
        cols = tight_cols[r]
        if (cols == goal).any():
            path = [r]
            while parent[path[-1]] != -1:
                path.append(parent[path[-1]])
            return path[::-1]
        for c in cols:
            nxt = int(owner[c])
            if nxt == target or nxt in parent or fixed[nxt]:
                continue
            parent[nxt] = r
            queue.append(nxt)
    return None


def _lexicographic_optimum(cost: np.ndarray, square: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """
    Among all optimal assignments, pick the smallest row-major column sequence.

    Every optimal assignment uses only tight edges, and two of them differ by
    alternating cycles inside strongly connected parts of the tight graph.
    """
    rows = cost.shape[0]
    n = square.shape[0]
    v = _column_potentials(square, sigma)
    u = square[np.arange(n), sigma] - v[sigma]
    scale = max(1.0, float(np.abs(square).max()))
    tight = (square - u[:, None] - v[None, :]) <= 1e-9 * scale
    tight[np.arange(n), sigma] = True

    owner = np.empty(n, dtype=np.intp)
    owner[sigma] = np.arange(n)
    src, dst_col = np.nonzero(tight)
    graph = csr_matrix((np.ones(src.size), (src, owner[dst_col])), shape=(n, n))
    _, labels = connected_components(graph, directed=True, connection="strong")
    movable = np.bincount(labels)[labels][:rows] >= 2
    if not movable.any():
        return sigma[:rows]

    logger.debug("canonicalising %d tied rows", int(movable.sum()))
    tol = _tie_tolerance(cost)
    tight_cols = [np.flatnonzero(tight[r]) for r in range(n)]
    sigma = sigma.copy()
    fixed = np.zeros(n, dtype=bool)
    drift = 0.0
    for i in np.flatnonzero(movable):
        fixed[:i] = True
        for j in tight_cols[i][tight_cols[i] < sigma[i]]:
            first = int(owner[j])
            if fixed[first] or labels[first] != labels[i]:
                continue
            path = _alternating_path(tight_cols, sigma, owner, fixed, first, int(i))
            if path is None:
                continue
            cycle = [int(i)] + path
            new_cols = np.roll(sigma[cycle], -1)
            delta = float(square[cycle, new_cols].sum() - square[cycle, sigma[cycle]].sum())
            if drift + delta > tol:
                continue
            drift += delta
            sigma[cycle] = new_cols
            owner[new_cols] = cycle
            break
    return sigma[:rows]


def solve_assignment(m: CostMatrix) -> Assignment:
    """
    Minimum-cost injective map from rows to columns.

    Args:
        m: R x C cost matrix with R <= C and finite entries

    Returns:
        The optimal assignment; equal-cost optima resolve to the
        lexicographically smallest column sequence

    Raises:
        InputError: If R > C or an entry is not finite
    """
    cost = as_cost_matrix(m)
    rows = cost.shape[0]
    if rows == 0:
        return Assignment(map=(), total_cost=0.0)
    square, sigma = _square_optimum(cost)
    cols = _lexicographic_optimum(cost, square, sigma)
    total = float(cost[np.arange(rows), cols].sum())
    return Assignment(map=tuple(int(c) for c in cols), total_cost=total)


def brute_force_assignment(m: CostMatrix) -> Assignment:
    """
    Exhaustive minimum over all injective maps; the test oracle for solve_assignment.

    Args:
        m: R x C cost matrix with R <= C <= 9

    Returns:
        The first optimal assignment in lexicographic order

    Raises:
        InputError: If C > 9, R > C or an entry is not finite
    """
    cost = as_cost_matrix(m)
    rows, cols = cost.shape
    if cols > ORACLE_MAX_COLS:
        raise InputError(f"oracle size limit ({cols} > {ORACLE_MAX_COLS} columns)")
    if rows == 0:
        return Assignment(map=(), total_cost=0.0)
    perms = np.array(list(itertools.permutations(range(cols), rows)), dtype=np.intp)
    totals = cost[np.arange(rows), perms].sum(axis=1)
    best = totals.min()
    first = int(np.flatnonzero(totals <= best + _tie_tolerance(cost))[0])
    chosen = perms[first]
    return Assignment(map=tuple(int(c) for c in chosen), total_cost=float(cost[np.arange(rows), chosen].sum()))
