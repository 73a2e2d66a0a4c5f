"""Minimum-cost bipartite flow by successive shortest augmenting paths.

The network is source -> row (capacity ``k``) -> column (capacity 1) ->
sink. Each row is expanded into ``k`` unit slots, and every slot is routed
along a shortest augmenting path in the reduced-cost residual graph
(Dijkstra with node potentials). Costs are integers so the potentials stay
exact and the returned flow is optimal for the scaled problem.
"""

from __future__ import annotations

import numpy as np
from numba import njit

COST_SCALE = 1_000_000


def scale_costs(distances: np.ndarray, scale: int = COST_SCALE) -> np.ndarray:
    """Round ``distances * scale`` to int64; ``inf`` becomes a prohibitive cost."""
    d = np.asarray(distances, dtype=float)
    finite = np.isfinite(d)
    out = np.zeros(d.shape, dtype=np.int64)
    out[finite] = np.rint(d[finite] * scale).astype(np.int64)
    if not finite.all():
        top = int(out[finite].max()) if finite.any() else 0
        big = (top + 1) * (min(d.shape) + 1)
        out[~finite] = big
    return out


def min_cost_assignment(cost: np.ndarray, k: int = 1) -> list[list[int]]:
    """Assign ``k`` distinct columns to every row at minimum total cost.

    ``cost`` is an integer matrix with ``rows * k <= columns``. Returns, for
    each row, the sorted list of its assigned column indices. Ties are
    resolved toward lower column indices, so the output is deterministic.
    """
    c = np.asarray(cost)
    if not np.issubdtype(c.dtype, np.integer):
        raise TypeError("costs must be integers; use scale_costs first")
    n_rows, n_cols = c.shape
    if k < 1:
        raise ValueError("k must be at least 1")
    n = n_rows * k
    if n > n_cols:
        raise ValueError(f"{n_rows} rows x {k} slots exceed {n_cols} columns")
    if n == 0:
        return [[] for _ in range(n_rows)]

    owner = _shortest_paths(np.ascontiguousarray(c, dtype=np.int64), k)
    result: list[list[int]] = [[] for _ in range(n_rows)]
    for j in range(1, n_cols + 1):
        if owner[j]:
            result[(owner[j] - 1) // k].append(j - 1)
    return result


@njit(cache=True)
def _shortest_paths(a, k):  # pragma: no cover - compiled
    """Route every row slot; returns the 1-based slot owning each column (0 = free)."""
    n_rows, n_cols = a.shape
    n = n_rows * k
    inf = np.iinfo(np.int64).max // 4
    # 1-based slot and column indices; column 0 is the virtual start node.
    u = np.zeros(n + 1, dtype=np.int64)
    v = np.zeros(n_cols + 1, dtype=np.int64)
    owner = np.zeros(n_cols + 1, dtype=np.int64)
    way = np.zeros(n_cols + 1, dtype=np.int64)
    minv = np.empty(n_cols + 1, dtype=np.int64)
    used = np.empty(n_cols + 1, dtype=np.bool_)
    for slot in range(1, n + 1):
        owner[0] = slot
        j0 = 0
        minv[:] = inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = owner[j0]
            r = (i0 - 1) // k
            ui = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n_cols + 1):
                if not used[j]:
                    cur = a[r, j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n_cols + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    return owner
