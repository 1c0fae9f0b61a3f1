"""Depth-first exact ML search over a real lattice (Schnorr-Euchner order).

Works on the triangularized problem ``min_u ||z - R u||^2`` with every
coordinate of ``u`` drawn from the same sorted level set.  Pruning only
discards branches whose partial distance already exceeds the best full
candidate, so the result is the exhaustive-search minimizer.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _expand(R, z, levels, u, dist, cost, order, pos, i):
    n = R.shape[0]
    L = levels.shape[0]
    r = z[i]
    for j in range(i + 1, n):
        r -= R[i, j] * u[j]
    for t in range(L):
        e = r - R[i, i] * levels[t]
        cost[i, t] = dist[i + 1] + e * e
        order[i, t] = t
    # insertion sort; L is tiny (2 or 4)
    for a in range(1, L):
        key = order[i, a]
        b = a - 1
        while b >= 0 and cost[i, order[i, b]] > cost[i, key]:
            order[i, b + 1] = order[i, b]
            b -= 1
        order[i, b + 1] = key
    pos[i] = 0


@njit(cache=True)
def sphere_search(R, z, levels, out):
    """Write the level indices of the minimizer into ``out``; return its distance."""
    n = R.shape[0]
    L = levels.shape[0]
    cost = np.empty((n, L))
    order = np.empty((n, L), np.int64)
    pos = np.zeros(n, np.int64)
    dist = np.zeros(n + 1)
    cur = np.zeros(n, np.int64)
    u = np.zeros(n)
    best = np.inf
    i = n - 1
    _expand(R, z, levels, u, dist, cost, order, pos, i)
    while True:
        if pos[i] >= L:
            i += 1
            if i == n:
                break
            continue
        t = order[i, pos[i]]
        c = cost[i, t]
        pos[i] += 1
        if c >= best:
            pos[i] = L
            continue
        u[i] = levels[t]
        cur[i] = t
        dist[i] = c
        if i == 0:
            best = c
            for j in range(n):
                out[j] = cur[j]
        else:
            i -= 1
            _expand(R, z, levels, u, dist, cost, order, pos, i)
    return best


@njit(cache=True)
def sphere_search_batch(R, z, levels, out):
    for b in range(R.shape[0]):
        sphere_search(R[b], z[b], levels, out[b])


@njit(cache=True)
def _householder_reduce(A, y, R, z):
    """Triangularize ``A`` (m x n) so that ``||y - Au||^2 = ||z - Ru||^2 + const``.

    ``R`` is ``n x n`` upper triangular (zero rows when ``m < n``) and ``z``
    holds the first ``n`` entries of ``Q^T y``.
    """
    m, n = A.shape
    W = A.copy()
    v = y.copy()
    h = np.empty(m)
    for k in range(min(m, n)):
        norm = 0.0
        for i in range(k, m):
            norm += W[i, k] * W[i, k]
        norm = np.sqrt(norm)
        if norm == 0.0:
            continue
        alpha = -norm if W[k, k] >= 0 else norm
        for i in range(k, m):
            h[i] = W[i, k]
        h[k] -= alpha
        hh = 0.0
        for i in range(k, m):
            hh += h[i] * h[i]
        for j in range(k, n):
            s = 0.0
            for i in range(k, m):
                s += h[i] * W[i, j]
            s = 2.0 * s / hh
            for i in range(k, m):
                W[i, j] -= s * h[i]
        s = 0.0
        for i in range(k, m):
            s += h[i] * v[i]
        s = 2.0 * s / hh
        for i in range(k, m):
            v[i] -= s * h[i]
    for i in range(n):
        z[i] = v[i] if i < m else 0.0
        for j in range(n):
            R[i, j] = W[i, j] if (i < m and j >= i) else 0.0


@njit(cache=True)
def ml_search_batch(A, y, levels, out):
    """Exact ML over ``levels^n`` of ``min_u ||y_b - A_b u||^2`` for every ``b``."""
    n = A.shape[2]
    R = np.empty((n, n))
    z = np.empty(n)
    for b in range(A.shape[0]):
        _householder_reduce(A[b], y[b], R, z)
        sphere_search(R, z, levels, out[b])
