"""H-representation polytopes ``{x | G x <= g}`` and the set operations on them.

Rows are normalised to unit Euclidean norm on construction so that every
tolerance below is a distance.  All operations return new polytopes; inputs
are never modified.
"""

from __future__ import annotations

import logging
from typing import Iterable, Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import _lpkernel as _lpk
from .solvers import LinearProgram, Status, solve_lp

logger = logging.getLogger(__name__)

REDUNDANCY_TOL = 1e-9
DEDUP_RESOLUTION = 1e-12
MAX_FM_ROWS = 100_000


class EmptyPolytopeError(ValueError):
    """Raised by operations that need a nonempty set."""


class ProjectionError(RuntimeError):
    """Fourier-Motzkin row blow-up or an unbounded projection."""


class Polytope:
    """Polytope ``{x in R^d | G x <= g}`` with normalised rows."""

    __slots__ = ("G", "g")

    def __init__(self, G, g, normalize: bool = True):
        g = np.asarray(g, dtype=float).reshape(-1)
        G = np.asarray(G, dtype=float)
        if G.ndim == 1 and g.size == 0:
            G = G.reshape(0, G.size)
        if G.ndim != 2 or G.shape[0] != g.shape[0]:
            raise ValueError(f"inconsistent shapes G{G.shape}, g{g.shape}")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(g))):
            raise ValueError("polytope data must be finite")
        if normalize and G.shape[0]:
            norms = np.linalg.norm(G, axis=1)
            zero = norms <= 1e-14
            if zero.any():
                # 0 <= g_i is either void or contradictory
                keep = ~zero | (g < 0)
                G, g, norms, zero = G[keep], g[keep], norms[keep], zero[keep]
                g = np.where(zero, -1.0, g)
            scale = np.where(zero, 1.0, norms)
            G = G / scale[:, None]
            g = g / scale
        G = np.ascontiguousarray(G)
        G.setflags(write=False)
        g.setflags(write=False)
        self.G = G
        self.g = g

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @property
    def nrows(self) -> int:
        return self.G.shape[0]

    def __repr__(self) -> str:
        return f"Polytope(rows={self.nrows}, dim={self.dim})"

    def __contains__(self, x) -> bool:
        return bool(contains(self, x))


def box(lower, upper) -> Polytope:
    """Axis-aligned box ``lower <= x <= upper``."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.size
    eye = np.eye(d)
    return Polytope(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))


def inf_ball(radius: float, d: int) -> Polytope:
    """``{x | ||x||_inf <= radius}``."""
    return box(-radius * np.ones(d), radius * np.ones(d))


def universe(d: int) -> Polytope:
    return Polytope(np.zeros((0, d)), np.zeros(0))


def contains(P: Polytope, x, tol: float = 1e-9):
    """Membership ``G x <= g + tol (1 + ||g||_inf)``; ``x`` may be a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != P.dim:
        raise ValueError(f"point dimension {x.shape[-1]} != polytope dimension {P.dim}")
    if P.nrows == 0:
        return np.ones(x.shape[:-1], dtype=bool) if x.ndim > 1 else True
    slack = tol * (1.0 + np.abs(P.g).max())
    ok = np.all(x @ P.G.T <= P.g + slack, axis=-1)
    return ok if x.ndim > 1 else bool(ok)


def support(P: Polytope, a) -> float:
    """``max_{x in P} a'x``; ``inf`` when unbounded in direction ``a``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != P.dim:
        raise ValueError("direction dimension mismatch")
    res = solve_lp(LinearProgram(-a, P.G, P.g))
    if res.status is Status.INFEASIBLE:
        raise EmptyPolytopeError("support of an empty polytope")
    if res.status is Status.UNBOUNDED:
        return float("inf")
    if res.status is not Status.OPTIMAL:
        raise RuntimeError(f"support LP failed: {res.status}")
    return -res.objective


def support_many(P: Polytope, directions) -> np.ndarray:
    """Row-wise support values for a matrix of directions (warm-started LPs)."""
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    out = np.empty(D.shape[0])
    warm = None
    for i, a in enumerate(D):
        res = solve_lp(LinearProgram(-a, P.G, P.g), warm_start=warm)
        if res.status is Status.INFEASIBLE:
            raise EmptyPolytopeError("support of an empty polytope")
        if res.status is Status.UNBOUNDED:
            out[i] = np.inf
            continue
        if res.status is not Status.OPTIMAL:
            raise RuntimeError(f"support LP failed: {res.status}")
        out[i] = -res.objective
        warm = res.active
    return out


def is_empty(P: Polytope) -> bool:
    if P.nrows == 0:
        return False
    res = solve_lp(LinearProgram(np.zeros(P.dim), P.G, P.g))
    return res.status is Status.INFEASIBLE


def chebyshev_center(P: Polytope, cap: float = 1.0):
    """Centre and radius of the largest inscribed ball (radius capped at ``cap``).

    Returns ``(None, -inf)`` for an empty polytope.
    """
    d = P.dim
    A = np.hstack([P.G, np.ones((P.nrows, 1))])
    A = np.vstack([A, np.append(np.zeros(d), 1.0)])
    b = np.append(P.g, cap)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    res = solve_lp(LinearProgram(c, A, b))
    if res.status is Status.INFEASIBLE:
        return None, -np.inf
    if res.status is not Status.OPTIMAL:
        raise RuntimeError(f"Chebyshev LP failed: {res.status}")
    return res.point[:d], float(res.point[d])


def bounding_box(P: Polytope):
    d = P.dim
    eye = np.eye(d)
    hi = support_many(P, eye)
    lo = -support_many(P, -eye)
    return lo, hi


def intersect(P: Polytope, Q: Polytope) -> Polytope:
    """Row concatenation; no redundancy removal."""
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch {P.dim} vs {Q.dim}")
    return Polytope(np.vstack([P.G, Q.G]), np.concatenate([P.g, Q.g]), normalize=False)


def intersect_all(polys: Iterable[Polytope]) -> Polytope:
    polys = list(polys)
    out = polys[0]
    for Q in polys[1:]:
        out = intersect(out, Q)
    return out


def _dedup(G, g):
    """Drop repeated normals, keeping the tightest right-hand side."""
    if G.shape[0] == 0:
        return G, g, np.zeros(0, dtype=int)
    keys = np.round(G / DEDUP_RESOLUTION).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    best = np.full(first.size, np.inf)
    np.minimum.at(best, inverse, g)
    keep = np.zeros(G.shape[0], dtype=bool)
    chosen = {}
    for idx in range(G.shape[0]):
        grp = inverse[idx]
        if grp not in chosen and g[idx] <= best[grp]:
            chosen[grp] = idx
            keep[idx] = True
    order = np.flatnonzero(keep)
    return G[order], g[order], order


def _max_over(G_rows, g_rows, a, warm=None, stop_above=None):
    stop = None if stop_above is None else -stop_above
    return solve_lp(LinearProgram(-a, G_rows, g_rows), warm_start=warm, stop_below=stop)


def _redundant_against(G, g, k, others, tol):
    res = _max_over(G[others], g[others], G[k])
    if res.status is Status.UNBOUNDED:
        return False
    if res.status is not Status.OPTIMAL:
        raise RuntimeError(f"redundancy LP failed: {res.status}")
    return -res.objective <= g[k] + tol


def _shoot(G, g, z, slack0, xs, alive, kept_mask):
    """First alive, not yet kept row crossed by the segment from ``z`` towards ``xs``."""
    D = xs - z
    GD = G @ D
    cand = alive & ~kept_mask & (GD > 1e-14)
    idx = np.flatnonzero(cand)
    if idx.size == 0:
        raise RuntimeError("ray shooting found no exit row")
    s = slack0[idx] / GD[idx]
    smin = s.min()
    ties = idx[s <= smin + 1e-9 * (1.0 + abs(smin))]
    return int(idx[np.argmin(s)]), ties.size > 1


def _clarkson(G, g, z, tol, outer=None, work=64, feas_tol=1e-9):
    """Clarkson's output-sensitive redundancy detection by ray shooting from ``z``.

    Each row is tested with an LP over a small working subset of the rows kept
    so far (the most similar normals plus the rows of ``outer``, a box known
    to contain the polytope).  The relaxed maximum bounds the true one, so a
    value below the right-hand side certifies redundancy; otherwise the
    maximiser is checked against all kept rows and violated rows are added
    to the working subset.

    Returns the kept row indices and those chosen at a tie of the ray-shooting
    step (which may be weakly redundant).
    """
    r, d = G.shape
    slack0 = g - G @ z
    alive = np.ones(r, dtype=bool)
    kept_mask = np.zeros(r, dtype=bool)
    KG = np.empty((0, d))
    Kg = np.empty(0)
    kept: list = []
    tied: set = set()
    oG, og = outer if outer is not None else (np.zeros((0, d)), np.zeros(0))
    max_iter = 50 * (work + d) + 100

    def add(h, tie):
        nonlocal KG, Kg
        kept.append(h)
        kept_mask[h] = True
        alive[h] = False
        if tie:
            tied.add(h)
        KG = np.vstack([KG, G[h]])
        Kg = np.append(Kg, g[h])

    for k in range(r):
        if not alive[k]:
            continue
        a, b = G[k], g[k]
        while True:
            nk = len(kept)
            xs = None
            if nk == 0:
                step = (b - a @ z + 1.0)
                xs = z + step * a
            else:
                if nk > work:
                    W = np.argpartition(-(KG @ a), work)[:work]
                else:
                    W = np.arange(nk)
                decided = False
                for _ in range(nk + 1):
                    Gw = np.ascontiguousarray(np.vstack([KG[W], oG]))
                    gw = np.concatenate([Kg[W], og])
                    status, x, _, ray = _lpk.lp_max(Gw, gw, a, z, max_iter)
                    if status == _lpk.OPTIMAL:
                        if a @ x <= b + tol:
                            alive[k] = False
                            decided = True
                            break
                        viol = KG @ x - Kg
                    elif status == _lpk.UNBOUNDED:
                        viol = KG @ ray
                        if viol.max() <= 1e-12:
                            xs = z + (b - a @ z + 1.0) / float(a @ ray) * ray
                            break
                    else:
                        viol = None
                    if viol is not None:
                        worst = viol.max()
                        if status == _lpk.OPTIMAL and worst <= feas_tol:
                            xs = x
                            break
                        extra = np.flatnonzero(viol > (feas_tol if status == _lpk.OPTIMAL else 1e-12))
                        extra = np.setdiff1d(extra, W)
                        if extra.size:
                            extra = extra[np.argsort(-viol[extra])][:16]
                            W = np.union1d(W, extra)
                            continue
                    # kernel failure or no progress: exact LP over all kept rows
                    res = _max_over(KG, Kg, a)
                    if res.status is Status.OPTIMAL:
                        if -res.objective <= b + tol:
                            alive[k] = False
                            decided = True
                            break
                        xs = res.point
                    elif res.status is Status.UNBOUNDED:
                        xs = z + (b - a @ z + 1.0) / float(a @ res.ray) * res.ray
                    else:
                        raise RuntimeError(f"redundancy LP failed: {res.status}")
                    break
                if decided:
                    break
                if xs is None:
                    raise RuntimeError("redundancy working set did not converge")
            h, tie = _shoot(G, g, z, slack0, xs, alive, kept_mask)
            add(h, tie)
            if h == k:
                break
    kept.sort()
    return kept, tied


def _outer_box(P: Polytope):
    """Rows of the bounding box of ``P`` (finite sides only)."""
    lo, hi = bounding_box(P)
    eye = np.eye(P.dim)
    rows = np.vstack([eye, -eye])
    rhs = np.concatenate([hi, -lo])
    ok = np.isfinite(rhs)
    return rows[ok], rhs[ok] + 1e-9 * (1.0 + np.abs(rhs[ok]))


def remove_redundancy(P: Polytope, tol: float = REDUNDANCY_TOL) -> Polytope:
    """Minimal H-representation of ``P`` (same point set).

    Rows are first deduplicated, then emptiness is checked, then each row is
    classified with LPs.  A row is kept iff maximising it over the remaining
    kept rows exceeds its right-hand side by more than ``tol``.
    """
    if P.nrows == 0:
        return P
    G, g, _ = _dedup(P.G, P.g)
    z, radius = chebyshev_center(Polytope(G, g, normalize=False))
    if z is None or radius < -tol:
        raise EmptyPolytopeError("cannot reduce an empty polytope")
    if radius > 1e-7:
        kept, suspects = _clarkson(G, g, z, tol, outer=_outer_box(Polytope(G, g, normalize=False)))
    else:
        kept = list(range(G.shape[0]))
        suspects = set(kept)
    # exact sweep of rows that may only touch the set (weakly redundant rows)
    final = list(kept)
    for k in sorted(suspects):
        others = [j for j in final if j != k]
        if not others:
            continue
        if _redundant_against(G, g, k, others, tol):
            final.remove(k)
    return Polytope(G[final], g[final], normalize=False)


def is_subset(P: Polytope, Q: Polytope, tol: float = 1e-7) -> bool:
    """``P subset of Q`` by row-wise support comparison."""
    if Q.nrows == 0:
        return True
    h = support_many(P, Q.G)
    return bool(np.all(h <= Q.g + tol))


def same_set(P: Polytope, Q: Polytope, tol: float = 1e-7) -> bool:
    return is_subset(P, Q, tol) and is_subset(Q, P, tol)


def pontryagin_diff(P: Polytope, Q: Polytope) -> Polytope:
    """``P (-) Q = {x | x + q in P for all q in Q}`` by row-wise erosion.

    The result may be empty; that is logged, not raised.
    """
    if P.dim != Q.dim:
        raise ValueError("dimension mismatch")
    if P.nrows == 0:
        return P
    h = support_many(Q, P.G)
    if not np.all(np.isfinite(h)):
        raise ValueError("Pontryagin difference needs a bounded subtrahend")
    out = Polytope(P.G, P.g - h, normalize=False)
    if is_empty(out):
        logger.warning("Pontryagin difference is empty")
    return out


# ---------------------------------------------------------------------------
# projection


def _fm_eliminate_last(G, g, max_rows):
    col = G[:, -1]
    pos = np.flatnonzero(col > 1e-12)
    neg = np.flatnonzero(col < -1e-12)
    zero = np.flatnonzero(np.abs(col) <= 1e-12)
    npairs = pos.size * neg.size
    if npairs + zero.size > max_rows:
        raise ProjectionError(
            f"Fourier-Motzkin step would create {npairs + zero.size} rows (limit {max_rows}); "
            "reduce the input first")
    Gp = G[pos] / col[pos, None]
    gp = g[pos] / col[pos]
    Gn = G[neg] / (-col[neg, None])
    gn = g[neg] / (-col[neg])
    pairs_G = (Gp[:, None, :-1] + Gn[None, :, :-1]).reshape(-1, G.shape[1] - 1)
    pairs_g = (gp[:, None] + gn[None, :]).reshape(-1)
    newG = np.vstack([G[zero, :-1], pairs_G])
    newg = np.concatenate([g[zero], pairs_g])
    return newG, newg


def _project_fm(P: Polytope, k: int, max_rows: int) -> Polytope:
    cur = remove_redundancy(P)
    while cur.dim > k:
        G, g = _fm_eliminate_last(cur.G, cur.g, max_rows)
        Q = Polytope(G, g)
        if Q.nrows == 0:
            return universe(k) if k == Q.dim else Q
        cur = remove_redundancy(Q)
    return cur


def _project_hull(P: Polytope, k: int, tol: float = 1e-9, seed: int = 0) -> Polytope:
    """Exact projection of a bounded polytope by LP-driven facet discovery."""
    d = P.dim
    warm = [None]

    def lp_max(a):
        c = np.zeros(d)
        c[:k] = -a
        res = solve_lp(LinearProgram(c, P.G, P.g), warm_start=warm[0])
        if res.status is Status.INFEASIBLE:
            raise EmptyPolytopeError("projection of an empty polytope")
        if res.status is Status.UNBOUNDED:
            raise ProjectionError("projection is unbounded")
        if res.status is not Status.OPTIMAL:
            raise RuntimeError(f"projection LP failed: {res.status}")
        warm[0] = res.active
        return res.point[:k], -res.objective

    if k == 1:
        _, hi = lp_max(np.ones(1))
        _, lo = lp_max(-np.ones(1))
        return Polytope(np.array([[1.0], [-1.0]]), np.array([hi, lo]))

    pts = []
    for i in range(k):
        for s in (1.0, -1.0):
            e = np.zeros(k)
            e[i] = s
            pts.append(lp_max(e)[0])
    rng = np.random.default_rng(seed)
    for _ in range(4 * k):
        arr = np.array(pts)
        if np.linalg.matrix_rank(arr[1:] - arr[0], tol=1e-9) == k:
            break
        pts.append(lp_max(rng.normal(size=k))[0])
    else:
        raise ProjectionError("projection is not full-dimensional")

    certified = {}
    while True:
        arr = np.unique(np.round(np.array(pts), 13), axis=0)
        try:
            hull = ConvexHull(arr)
        except QhullError as exc:
            raise ProjectionError(f"hull construction failed: {exc}") from exc
        added = False
        for eq in np.unique(np.round(hull.equations, 12), axis=0):
            normal, off = eq[:k], -eq[k]
            nn = np.linalg.norm(normal)
            normal, off = normal / nn, off / nn
            key = tuple(np.round(normal, 9))
            if key in certified:
                continue
            y, val = lp_max(normal)
            if val > off + tol * (1.0 + abs(off)):
                pts.append(y)
                added = True
            else:
                certified[key] = (normal, max(off, val))
        if not added:
            break
    # keep only facets of the final hull
    final = {}
    for eq in np.unique(np.round(hull.equations, 12), axis=0):
        normal = eq[:k] / np.linalg.norm(eq[:k])
        key = tuple(np.round(normal, 9))
        final[key] = certified[key]
    rows = np.array([v[0] for v in final.values()])
    rhs = np.array([v[1] for v in final.values()])
    return remove_redundancy(Polytope(rows, rhs))


def project(P: Polytope, k: int, method: str = "auto", max_rows: int = MAX_FM_ROWS) -> Polytope:
    """Projection of ``P`` onto its first ``k`` coordinates.

    ``method="fm"`` runs Fourier-Motzkin elimination of the trailing
    coordinates with redundancy removal after each step; ``"hull"`` discovers
    the facets of the (bounded) projection with LPs; ``"auto"`` tries
    Fourier-Motzkin and switches to ``"hull"`` when the row guard trips.
    """
    if not 0 < k < P.dim:
        raise ValueError(f"need 0 < k < d, got k={k}, d={P.dim}")
    if method == "fm":
        return _project_fm(P, k, max_rows)
    if method == "hull":
        return _project_hull(P, k)
    if method != "auto":
        raise ValueError(f"unknown projection method {method!r}")
    try:
        return _project_fm(P, k, max_rows)
    except ProjectionError as exc:
        logger.info("switching to LP hull projection: %s", exc)
        return _project_hull(P, k)


# ---------------------------------------------------------------------------
# text format


def to_text(P: Polytope) -> str:
    """``r d`` header then one ``G_i | g_i`` row per line, 17 significant digits."""
    lines = [f"{P.nrows} {P.dim}"]
    for row, rhs in zip(P.G, P.g):
        lines.append(" ".join(f"{v:.17g}" for v in (*row, rhs)))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> Polytope:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    r, d = (int(t) for t in lines[0].split())
    data = np.array([ln.split() for ln in lines[1:1 + r]], dtype=float).reshape(r, d + 1)
    return Polytope(data[:, :d], data[:, d], normalize=False)


def slice_fixed(P: Polytope, keep: np.ndarray, fixed_index: np.ndarray, fixed_value) -> Polytope:
    """Restrict ``P`` to coordinates ``keep`` with the others fixed to ``fixed_value``."""
    fixed_value = np.asarray(fixed_value, dtype=float)
    g = P.g - P.G[:, fixed_index] @ fixed_value
    return Polytope(P.G[:, keep], g)


def sample_uniform(P: Polytope, count: int, rng: np.random.Generator,
                   bounds: Optional[tuple] = None, max_batches: int = 1000) -> np.ndarray:
    """Rejection samples from the bounding box of a bounded polytope."""
    lo, hi = bounds if bounds is not None else bounding_box(P)
    out = []
    have = 0
    for _ in range(max_batches):
        cand = rng.uniform(lo, hi, size=(max(4 * count, 64), P.dim))
        ok = cand[contains(P, cand, tol=0.0)]
        out.append(ok)
        have += ok.shape[0]
        if have >= count:
            return np.vstack(out)[:count]
    raise RuntimeError("rejection sampling acceptance too low")
