"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package's numerical code paths.
"""
import math

import numpy as np


def mode3_loop(W, M):
    I, J, K = W.shape
    T = M.shape[0]
    out = np.zeros((I, J, T))
    for i in range(I):
        for j in range(J):
            for t in range(T):
                s = 0.0
                for k in range(K):
                    s += M[t][k] * W[i, j, k]
                out[i, j, t] = s
    return out


def facewise_loop(W, Y):
    I, J, K = W.shape
    Q = Y.shape[1]
    out = np.zeros((I, Q, K))
    for k in range(K):
        for i in range(I):
            for q in range(Q):
                s = 0.0
                for j in range(J):
                    s += W[i, j, k] * Y[j, q, k]
                out[i, q, k] = s
    return out


def gauss_jordan_inverse(M):
    """Plain Gauss-Jordan elimination with partial pivoting."""
    n = len(M)
    a = [list(map(float, row)) + [1.0 if i == j else 0.0 for j in range(n)]
         for i, row in enumerate(M)]
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(a[r][c]))
        a[c], a[p] = a[p], a[c]
        piv = a[c][c]
        a[c] = [v / piv for v in a[c]]
        for r in range(n):
            if r != c and a[r][c] != 0.0:
                f = a[r][c]
                a[r] = [x - f * y for x, y in zip(a[r], a[c])]
    return np.array([row[n:] for row in a])


def m_product_loop(W, Y, M):
    Minv = gauss_jordan_inverse(M)
    return mode3_loop(facewise_loop(mode3_loop(W, M), mode3_loop(Y, M)), Minv)


def banded_mean_by_hand(T, b):
    # 1-indexed transcription of the defining formula
    M = [[0.0] * T for _ in range(T)]
    for t in range(1, T + 1):
        for k in range(1, T + 1):
            if max(1, t - b + 1) <= k <= t:
                M[t - 1][k - 1] = 1.0 / min(b, t)
    return np.array(M)


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def spherical_law_of_cosines(lat1, lon1, lat2, lon2, radius=6371.0):
    a, b, c, d = map(math.radians, (lat1, lon1, lat2, lon2))
    cosang = math.sin(a) * math.sin(c) + math.cos(a) * math.cos(c) * math.cos(d - b)
    return radius * math.acos(max(-1.0, min(1.0, cosang)))


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
