"""Compiled primal simplex for ``max a'x s.t. Gx <= g`` from a strictly interior point.

Used by the redundancy elimination, which solves one small LP per row.  Rows
are assumed normalised to unit length.  Without numba the same code runs as
plain Python.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

OPTIMAL, UNBOUNDED, FAILED = 0, 1, 2


@njit(cache=True)
def _ratio(G, g, x, p, in_basis, eps):
    r = G.shape[0]
    best_t = np.inf
    best_j = -1
    best_gp = 0.0
    for j in range(r):
        if in_basis[j]:
            continue
        gp = 0.0
        for c in range(G.shape[1]):
            gp += G[j, c] * p[c]
        if gp <= eps:
            continue
        s = g[j]
        for c in range(G.shape[1]):
            s -= G[j, c] * x[c]
        if s < 0.0:
            s = 0.0
        t = s / gp
        if t < best_t - 1e-12 * (1.0 + best_t) or (abs(t - best_t) <= 1e-12 * (1.0 + best_t) and gp > best_gp):
            best_t = t
            best_j = j
            best_gp = gp
    return best_t, best_j


@njit(cache=True)
def lp_max(G, g, a, z, max_iter):
    """Returns ``(status, x, basis, ray)``; ``basis`` holds ``d`` row indices at an optimum."""
    r, d = G.shape
    x = z.copy()
    basis = -np.ones(d, np.int64)
    in_basis = np.zeros(r, np.bool_)
    Q = np.zeros((d, d))
    na = np.sqrt(np.sum(a * a))
    ray = np.zeros(d)
    nb = 0
    it = 0
    # walk from the interior point to a vertex, never decreasing a'x
    while nb < d:
        it += 1
        if it > max_iter:
            return FAILED, x, basis, ray
        p = a.copy()
        for k in range(nb):
            p -= (Q[k] @ p) * Q[k]
        free = False
        if np.sqrt(np.sum(p * p)) <= 1e-11 * na:
            best = 0.0
            for j in range(d):
                q = np.zeros(d)
                q[j] = 1.0
                for k in range(nb):
                    q -= (Q[k] @ q) * Q[k]
                nq = np.sqrt(np.sum(q * q))
                if nq > best:
                    best = nq
                    p = q / nq
            free = True
        t, j = _ratio(G, g, x, p, in_basis, 1e-9 * np.sqrt(np.sum(p * p)))
        if j < 0:
            if not free:
                ray[:] = p
                return UNBOUNDED, x, basis, ray
            p = -p
            t, j = _ratio(G, g, x, p, in_basis, 1e-9 * np.sqrt(np.sum(p * p)))
            if j < 0:
                return FAILED, x, basis, ray
        x = x + t * p
        v = G[j].copy()
        for k in range(nb):
            v -= (Q[k] @ v) * Q[k]
        nv = np.sqrt(np.sum(v * v))
        if nv < 1e-10:
            return FAILED, x, basis, ray
        Q[nb] = v / nv
        basis[nb] = j
        in_basis[j] = True
        nb += 1
    B = np.empty((d, d))
    for k in range(d):
        B[k] = G[basis[k]]
    degenerate = 0
    bland = False
    while True:
        it += 1
        if it > max_iter:
            return FAILED, x, basis, ray
        try:
            lam = np.linalg.solve(B.T, a)
        except Exception:
            return FAILED, x, basis, ray
        i = -1
        worst = -1e-10 * (1.0 + na)
        for k in range(d):
            if lam[k] < worst:
                if bland:
                    if i < 0 or basis[k] < basis[i]:
                        i = k
                else:
                    worst = lam[k]
                    i = k
        if i < 0:
            return OPTIMAL, x, basis, ray
        e = np.zeros(d)
        e[i] = -1.0
        try:
            p = np.linalg.solve(B, e)
        except Exception:
            return FAILED, x, basis, ray
        t, j = _ratio(G, g, x, p, in_basis, 1e-12 * np.sqrt(np.sum(p * p)))
        if j < 0:
            ray[:] = p
            return UNBOUNDED, x, basis, ray
        if t <= 1e-14:
            degenerate += 1
            if degenerate > 2 * d + 5:
                bland = True
        else:
            degenerate = 0
        in_basis[basis[i]] = False
        basis[i] = j
        in_basis[j] = True
        B[i] = G[j]
        rhs = np.empty(d)
        for k in range(d):
            rhs[k] = g[basis[k]]
        try:
            x = np.linalg.solve(B, rhs)
        except Exception:
            return FAILED, x, basis, ray
