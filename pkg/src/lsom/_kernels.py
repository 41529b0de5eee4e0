"""Compiled inner loops shared by every BMU search and update path.

All distance evaluations go through ``_row_dist`` so that single, batched and
training searches agree exactly.
"""
import math

import numpy as np
from numba import njit

@njit(cache=True, inline="always")
def _row_dist(V, k, x, bound):
    """Squared distance from ``x`` to row ``k`` of ``V``.

    The sum runs over eight fixed interleaved lanes combined pairwise; the
    order never changes, so results are reproducible.  Lanes only grow, so once
    the combined partial sum exceeds ``bound`` the row cannot win and the
    partial value is returned early.
    """
    D = x.shape[0]
    a0 = a1 = a2 = a3 = a4 = a5 = a6 = a7 = 0.0
    j = 0
    while j + 8 <= D:
        d0 = V[k, j] - x[j]
        d1 = V[k, j + 1] - x[j + 1]
        d2 = V[k, j + 2] - x[j + 2]
        d3 = V[k, j + 3] - x[j + 3]
        d4 = V[k, j + 4] - x[j + 4]
        d5 = V[k, j + 5] - x[j + 5]
        d6 = V[k, j + 6] - x[j + 6]
        d7 = V[k, j + 7] - x[j + 7]
        a0 += d0 * d0
        a1 += d1 * d1
        a2 += d2 * d2
        a3 += d3 * d3
        a4 += d4 * d4
        a5 += d5 * d5
        a6 += d6 * d6
        a7 += d7 * d7
        j += 8
        if (j & 31) == 0 and ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7)) > bound:
            return ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7))
    while j < D:
        d0 = V[k, j] - x[j]
        a0 += d0 * d0
        j += 1
    return ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7))


@njit(cache=True)
def sq_dists(V, x):
    K = V.shape[0]
    out = np.empty(K)
    for k in range(K):
        out[k] = _row_dist(V, k, x, np.inf)
    return out


@njit(cache=True)
def sq_dists_rows(V, X, idx):
    """Squared distance from ``X[i]`` to ``V[idx[i]]`` for every row ``i``."""
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = _row_dist(V, idx[i], X[i], np.inf)
    return out


@njit(cache=True)
def nearest_among(V, x, nodes):
    best = np.inf
    bi = nodes[0]
    for k in nodes:
        s = _row_dist(V, k, x, best)
        if s < best:
            best = s
            bi = k
    return bi


@njit(cache=True)
def update(vectors, norms, x, br, bc, rate, r_t):
    """Kohonen update around BMU ``(br, bc)``; ``r_t <= 0`` means a 1x1 grid.

    ``norms`` holds the squared norm of every node (row-major) and is
    refreshed for each node that moves.
    """
    side = vectors.shape[0]
    D = vectors.shape[2]
    if r_t <= 0.0:
        s = 0.0
        for j in range(D):
            vectors[0, 0, j] += rate * (x[j] - vectors[0, 0, j])
            s += vectors[0, 0, j] * vectors[0, 0, j]
        norms[0] = s
        return
    reach = max(int(math.ceil(r_t)) - 1, 0)
    r0 = max(br - reach, 0)
    r1 = min(br + reach + 1, side)
    c0 = max(bc - reach, 0)
    c1 = min(bc + reach + 1, side)
    r2 = r_t * r_t
    for i in range(r0, r1):
        for c in range(c0, c1):
            g2 = float((i - br) * (i - br) + (c - bc) * (c - bc))
            if math.sqrt(g2) < r_t:
                w = rate * math.exp(-g2 / r2)
                s = 0.0
                for j in range(D):
                    vectors[i, c, j] += w * (x[j] - vectors[i, c, j])
                    s += vectors[i, c, j] * vectors[i, c, j]
                norms[i * side + c] = s
