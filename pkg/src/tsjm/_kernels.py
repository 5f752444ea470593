"""Compiled inner loops for DTW and Kuhn-Munkres.

Kept free of Python objects so numba can compile them in nopython mode and
release the GIL. The public wrappers live in ``otm`` and ``bgm``.
"""

import numpy as np
from numba import njit

_NB = dict(cache=True, nogil=True)

# backpointer codes, in tie-break preference order
DIAG, RIGHT, DOWN = 0, 1, 2


@njit(**_NB)
def dtw_accumulate(D):
    """Cumulative cost and backpointers for steps (1,1), (0,1), (1,0)."""
    n, m = D.shape
    acc = np.empty((n, m))
    back = np.full((n, m), -1, dtype=np.int8)
    acc[0, 0] = D[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + D[0, j]
        back[0, j] = RIGHT
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + D[i, 0]
        back[i, 0] = DOWN
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            code = DIAG
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
                code = RIGHT
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
                code = DOWN
            acc[i, j] = best + D[i, j]
            back[i, j] = code
    return acc, back


@njit(**_NB)
def dtw_path(D):
    acc, back = dtw_accumulate(D)
    n, m = D.shape
    path = np.empty((n + m - 1, 2), dtype=np.int64)
    i, j = n - 1, m - 1
    k = 0
    while True:
        path[k, 0] = i
        path[k, 1] = j
        k += 1
        code = back[i, j]
        if code == -1:
            break
        if code == DIAG:
            i -= 1
            j -= 1
        elif code == RIGHT:
            j -= 1
        else:
            i -= 1
    out = path[:k][::-1].copy()
    return out, acc[n - 1, m - 1]


@njit(**_NB)
def dtw_cost_batch(Ds):
    out = np.empty(Ds.shape[0])
    for b in range(Ds.shape[0]):
        acc, _ = dtw_accumulate(Ds[b])
        out[b] = acc[-1, -1]
    return out


@njit(**_NB)
def km_assign(W):
    """Maximum-weight perfect matching on a square weight matrix.

    Rows are inserted in ascending order; each insertion grows an alternating
    tree over tight edges (lx[i] + ly[j] == W[i, j]) and relabels by the
    smallest slack until a free column is reached.
    Returns assignment[row] = column.
    """
    n = W.shape[0]
    inf = np.inf
    lx = np.empty(n + 1)
    ly = np.zeros(n + 1)
    lx[0] = 0.0
    for i in range(n):
        lx[i + 1] = W[i].max()
    # owner[j] = row (1-based) matched to column j (1-based); column 0 is virtual
    owner = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    slack = np.empty(n + 1)
    used = np.zeros(n + 1, dtype=np.bool_)
    for row in range(1, n + 1):
        owner[0] = row
        j0 = 0
        slack[:] = inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = inf
            j1 = -1
            for j in range(1, n + 1):
                if not used[j]:
                    cur = lx[i0] + ly[j] - W[i0 - 1, j - 1]
                    if cur < slack[j]:
                        slack[j] = cur
                        way[j] = j0
                    if slack[j] < delta:
                        delta = slack[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    lx[owner[j]] -= delta
                    ly[j] += delta
                else:
                    slack[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    assignment = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[owner[j] - 1] = j - 1
    return assignment


@njit(**_NB)
def km_weight_batch(Ws):
    out = np.empty(Ws.shape[0])
    for b in range(Ws.shape[0]):
        a = km_assign(Ws[b])
        s = 0.0
        for i in range(a.shape[0]):
            s += Ws[b, i, a[i]]
        out[b] = s
    return out
