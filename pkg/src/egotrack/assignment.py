"""Minimum-cost linear assignment (Hungarian / Kuhn-Munkres).

The solver uses shortest augmenting paths with row/column potentials,
O(n^2 m) for an n x m matrix with n <= m. :func:`assign` adds a
deterministic tie-break on top: among all optimal matchings it returns the
lexicographically smallest sequence of ``(row, col)`` pairs.
"""

from __future__ import annotations

import math

import numpy as np

# relative slack when deciding whether a constrained optimum ties the global one
TIE_RTOL = 1e-12


def _solve_wide(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve an n x m problem with n <= m.

    Returns the column matched to every row together with the final row and
    column potentials (reduced cost ``cost[i, j] - u[i] - v[j] >= 0``).
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    # col_row[j] = 1-based row matched to 1-based column j (0 = free)
    col_row = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        col_row[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            free = ~used[1:]
            cols = np.nonzero(free)[0] + 1
            cur = cost[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            k = int(np.argmin(minv[cols]))
            j1 = int(cols[k])
            delta = minv[j1]
            used_idx = np.nonzero(used)[0]
            u[col_row[used_idx]] += delta
            v[used_idx] -= delta
            minv[cols] -= delta
            j0 = j1
            if col_row[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_row[j0] = col_row[j1]
            j0 = j1
    row_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if col_row[j]:
            row_col[col_row[j] - 1] = j - 1
    return row_col, u[1:], v[1:]


def _solve_with_reduced(cost: np.ndarray) -> tuple[list[tuple[int, int]], np.ndarray]:
    n, m = cost.shape
    if n <= m:
        row_col, u, v = _solve_wide(cost)
        pairs = [(i, int(j)) for i, j in enumerate(row_col)]
        return pairs, cost - u[:, None] - v[None, :]
    col_row, u, v = _solve_wide(cost.T)
    pairs = sorted((int(i), j) for j, i in enumerate(col_row))
    return pairs, cost - v[:, None] - u[None, :]


def solve(cost: np.ndarray) -> list[tuple[int, int]]:
    """One optimal matching of size ``min(n, m)`` with no tie-break guarantee."""
    cost = np.asarray(cost, dtype=float)
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return []
    return _solve_with_reduced(cost)[0]


def optimal_cost(cost: np.ndarray) -> float:
    cost = np.asarray(cost, dtype=float)
    return math.fsum(cost[i, j] for i, j in solve(cost))


def assign(cost) -> list[tuple[int, int]]:
    """Minimum total-cost matching of size ``min(n, m)``.

    Ties between optimal matchings are broken towards the lexicographically
    smallest row-sorted pair list: rows are fixed in ascending order, each to
    the lowest column (or, when rows outnumber columns, left unmatched only
    after every column choice fails) that still admits an optimal completion.

    Args:
        cost: ``n x m`` array-like of finite reals.

    Returns:
        ``(row, col)`` pairs sorted by row.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")

    plain, reduced = _solve_with_reduced(cost)
    best = math.fsum(cost[i, j] for i, j in plain)
    scale = max(1.0, float(np.abs(cost).sum()))
    slack = TIE_RTOL * scale
    # every edge of every optimal matching has zero reduced cost
    candidate = reduced <= 1e-9 * scale
    n, m = cost.shape
    rows = list(range(n))
    cols = list(range(m))
    fixed: list[tuple[int, int]] = []
    spent: list[float] = []

    def completes(r_left, c_left) -> bool:
        rest = optimal_cost(cost[np.ix_(r_left, c_left)]) if r_left and c_left else 0.0
        return math.fsum(spent) + rest <= best + slack

    while rows and cols:
        r = rows[0]
        r_left = rows[1:]
        chosen = False
        for c in cols:
            if not candidate[r, c]:
                continue
            c_left = [j for j in cols if j != c]
            spent.append(cost[r, c])
            if completes(r_left, c_left):
                fixed.append((r, c))
                cols = c_left
                chosen = True
                break
            spent.pop()
        if not chosen and len(r_left) < len(cols):
            # cannot leave this row unmatched; accept the plain optimum
            sol = solve(cost[np.ix_(rows, cols)])
            fixed.extend((rows[i], cols[j]) for i, j in sol)
            return sorted(fixed)
        rows = r_left
    return fixed
