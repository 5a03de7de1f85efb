"""Measurement-noise model and outer bounds on the unknown system matrices.

The noise is a zero-mean Gaussian truncated to a compact polytope (exact
rejection sampling).  The matrix bound is an entrywise interval box around
``[A, B]`` obtained by searching over noise sequences that could have
corrupted the recorded data.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .datarep import RankDeficient, TrajectoryData
from .geometry import Polytope, inf_ball, support_many

logger = logging.getLogger(__name__)

MIN_ACCEPTANCE = 1e-4
ACCEPTANCE_WINDOW = 100_000
MAX_VERTICES = 2 ** 16


class NoiseConfigError(ValueError):
    """Support and scale of the noise model do not fit together."""


@dataclass(frozen=True)
class NoiseModel:
    """Truncated zero-mean Gaussian with per-dimension standard deviation ``scale``."""

    support: Polytope
    scale: np.ndarray
    bound: Optional[float] = None  # set for infinity-norm boxes, used in descriptors

    def __post_init__(self):
        scale = np.broadcast_to(np.asarray(self.scale, dtype=float), (self.support.dim,)).copy()
        if np.any(scale < 0):
            raise ValueError("noise scale must be nonnegative")
        if self.support.nrows and np.any(self.support.g < 0):
            raise ValueError("noise support must contain the origin")
        object.__setattr__(self, "scale", scale)

    @classmethod
    def box(cls, bound: float, n: int, std_factor: float = 1.0 / 3.0) -> "NoiseModel":
        """``||eps||_inf <= bound`` with standard deviation ``std_factor * bound``."""
        if bound < 0:
            raise ValueError("noise bound must be nonnegative")
        return cls(inf_ball(bound, n), np.full(n, std_factor * bound), bound=float(bound))

    @property
    def n(self) -> int:
        return self.support.dim

    @property
    def degenerate(self) -> bool:
        return bool(np.all(self.scale == 0.0))

    def describe(self) -> dict:
        return {"dim": self.n, "bound": self.bound, "scale": self.scale.tolist()}


def _inside(model: NoiseModel, eps: np.ndarray) -> np.ndarray:
    if model.support.nrows == 0:
        return np.ones(eps.shape[0], dtype=bool)
    return np.all(eps @ model.support.G.T <= model.support.g, axis=1)


def sample_noise_batch(model: NoiseModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` iid draws, shape ``(count, n)``."""
    n = model.n
    if count == 0:
        return np.zeros((0, n))
    if model.degenerate:
        return np.zeros((count, n))
    out = np.empty((count, n))
    have = 0
    drawn = 0
    accepted = 0
    while have < count:
        need = count - have
        batch = rng.standard_normal((int(need * 1.05) + 16, n)) * model.scale
        ok = batch[_inside(model, batch)]
        drawn += batch.shape[0]
        accepted += ok.shape[0]
        take = min(ok.shape[0], need)
        out[have:have + take] = ok[:take]
        have += take
        if drawn >= ACCEPTANCE_WINDOW and accepted < MIN_ACCEPTANCE * drawn:
            raise NoiseConfigError(
                f"rejection acceptance {accepted / drawn:.2e} below {MIN_ACCEPTANCE:g}; "
                "noise scale does not match the support")
    return out


def sample_noise(model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    return sample_noise_batch(model, 1, rng)[0]


def sample_noise_sequence(model: NoiseModel, length: int, rng: np.random.Generator) -> np.ndarray:
    """iid draws over time, shape ``(length, n)``."""
    return sample_noise_batch(model, length, rng)


# ---------------------------------------------------------------------------
# identification and matrix bounds


def _pinv_batch(D: np.ndarray):
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    ok = s[:, -1] > 1e-10 * s[:, 0]
    s_inv = 1.0 / np.where(s > 0, s, 1.0)
    return np.einsum("kji,kj,klj->kil", Vt, s_inv, U), ok


def identify_exact(H_x: np.ndarray, H_u: np.ndarray, n: int, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """``[A, B] = H_x[n:2n] [H_x[:n]; H_u[:m]]^+`` from noise-free Hankel data."""
    D = np.vstack([H_x[:n], H_u[:m]])
    pinv, ok = _pinv_batch(D[None])
    if not ok[0]:
        raise RankDeficient("identification data matrix is rank deficient")
    AB = H_x[n:2 * n] @ pinv[0]
    return AB[:, :n], AB[:, n:]


def _identify_noisy(data: TrajectoryData, horizon: int, eps: np.ndarray):
    """Batched identification for candidate noise sequences ``eps`` of shape ``(K, N, n)``."""
    cols = data.N - horizon
    X = data.noisy_states[None] - eps
    X0 = X[:, :cols, :].transpose(0, 2, 1)
    X1 = X[:, 1:cols + 1, :].transpose(0, 2, 1)
    U0 = np.broadcast_to(data.inputs[:cols].T, (eps.shape[0], data.m, cols))
    D = np.concatenate([X0, U0], axis=1)
    pinv, ok = _pinv_batch(D)
    return X1 @ pinv, ok


def matrix_norm(AB: np.ndarray, kind: str = "inf") -> np.ndarray:
    """Induced norm of a batch of matrices (``inf``: max row sum, ``1``: max column sum)."""
    if kind == "inf":
        return np.abs(AB).sum(axis=-1).max(axis=-1)
    if kind == "1":
        return np.abs(AB).sum(axis=-2).max(axis=-1)
    raise ValueError(f"unsupported norm {kind!r}")


@dataclass
class SearchConfig:
    """Multi-start coordinate ascent over noise sequences."""

    random_starts: int = 3
    vertex_starts: int = 3
    sweeps: int = 3
    safety: float = 1.1


def _segment(G, g, point, coord):
    """Feasible displacement interval of ``point`` along coordinate ``coord`` in {G e <= g}."""
    if G.shape[0] == 0:
        return -np.inf, np.inf
    slack = g - G @ point
    col = G[:, coord]
    pos = col > 1e-15
    neg = col < -1e-15
    hi = np.min(slack[pos] / col[pos]) if pos.any() else np.inf
    lo = np.max(slack[neg] / col[neg]) if neg.any() else -np.inf
    return min(lo, 0.0), max(hi, 0.0)


def _maximize(objective, data: TrajectoryData, model: NoiseModel, cfg: SearchConfig,
              rng: np.random.Generator):
    """Best objective value over ``eps_i in support`` found by multi-start ascent."""
    N, n = data.N, data.n
    G, g = model.support.G, model.support.g
    zero = np.zeros((1, N, n))
    base = objective(zero)[0]
    if not np.isfinite(base):
        raise RankDeficient("noise-free identification is rank deficient")
    if model.support.nrows and np.all(np.abs(g) == 0.0):
        return base, zero[0]

    # linearised start: push every entry to the support vertex along the gradient
    h = 1e-7 * max(1.0, float(np.abs(g).max(initial=1.0)))
    pert = np.repeat(zero, N * n, axis=0).reshape(N * n, N, n)
    pert.reshape(N * n, N * n)[np.arange(N * n), np.arange(N * n)] = h
    grad = ((objective(pert) - base) / h).reshape(N, n)
    grad = np.where(np.isfinite(grad), grad, 0.0)

    def vertex_towards(directions):
        out = np.empty_like(directions)
        for i, a in enumerate(directions):
            if not np.any(a):
                out[i] = 0.0
                continue
            sub = _argmax_in_support(model, a)
            out[i] = sub
        return out

    starts = [zero[0], vertex_towards(grad)]
    for _ in range(cfg.vertex_starts):
        starts.append(vertex_towards(rng.standard_normal((N, n))))
    for _ in range(cfg.random_starts):
        starts.append(sample_noise_sequence(model, N, rng) if not model.degenerate
                      else np.zeros((N, n)))

    best_val, best_eps = base, zero[0]
    for start in starts:
        cur = start.copy()
        cur_val = objective(cur[None])[0]
        if not np.isfinite(cur_val):
            continue
        for _ in range(cfg.sweeps):
            improved = False
            for i in range(N):
                for c in range(n):
                    lo, hi = _segment(G, g, cur[i], c)
                    if not (np.isfinite(lo) and np.isfinite(hi)):
                        continue
                    steps = np.array([lo, 0.5 * lo, 0.5 * hi, hi])
                    cand = np.repeat(cur[None], steps.size, axis=0)
                    cand[:, i, c] += steps
                    vals = objective(cand)
                    k = int(np.nanargmax(np.where(np.isfinite(vals), vals, -np.inf)))
                    if vals[k] > cur_val * (1 + 1e-13) + 1e-15:
                        cur, cur_val = cand[k], float(vals[k])
                        improved = True
            if not improved:
                break
        if cur_val > best_val:
            best_val, best_eps = cur_val, cur
    return best_val, best_eps


def _argmax_in_support(model: NoiseModel, a: np.ndarray) -> np.ndarray:
    from .solvers import LinearProgram, solve_lp

    res = solve_lp(LinearProgram(-a, model.support.G, model.support.g))
    return res.point if res.optimal else np.zeros_like(a)


def estimate_rho(data: TrajectoryData, model: NoiseModel, norm_kind: str = "inf",
                 search: Optional[SearchConfig] = None, rng: Optional[np.random.Generator] = None,
                 horizon: int = 0) -> float:
    """Upper estimate of ``||[A, B]||`` over all noise sequences in the support.

    The best value found by the search is multiplied by ``search.safety``.
    """
    search = search or SearchConfig()
    rng = rng or np.random.default_rng(0)

    def objective(eps):
        AB, ok = _identify_noisy(data, horizon, eps)
        return np.where(ok, matrix_norm(AB, norm_kind), -np.inf)

    best, _ = _maximize(objective, data, model, search, rng)
    if not np.isfinite(best):
        raise RankDeficient("every evaluated noise sequence gave rank-deficient data")
    return float(best * search.safety)


def estimate_entry_bounds(data: TrajectoryData, model: NoiseModel,
                          search: Optional[SearchConfig] = None,
                          rng: Optional[np.random.Generator] = None, horizon: int = 0):
    """Entrywise interval ``lower <= [A, B] <= upper`` over noise sequences in the support.

    Every entry is minimised and maximised separately; the deviation from the
    noise-free-assumption estimate is inflated by ``search.safety``.
    """
    search = search or SearchConfig()
    rng = rng or np.random.default_rng(0)
    n, m = data.n, data.m
    AB0, ok = _identify_noisy(data, horizon, np.zeros((1, data.N, n)))
    if not ok[0]:
        raise RankDeficient("identification data matrix is rank deficient")
    center = AB0[0]
    lower = center.copy()
    upper = center.copy()
    for i in range(n):
        for j in range(n + m):
            for sgn in (1.0, -1.0):
                def objective(eps, i=i, j=j, sgn=sgn):
                    AB, ok = _identify_noisy(data, horizon, eps)
                    return np.where(ok, sgn * AB[:, i, j], -np.inf)

                val, _ = _maximize(objective, data, model, search, rng)
                if sgn > 0:
                    upper[i, j] = center[i, j] + search.safety * max(val - center[i, j], 0.0)
                else:
                    lower[i, j] = center[i, j] - search.safety * max(center[i, j] + val, 0.0)
    return center, lower, upper


@dataclass
class SystemBound:
    """Entrywise box ``lower <= [A_j, B_j] <= upper`` and its vertex matrices."""

    lower: np.ndarray
    upper: np.ndarray
    n: int
    m: int
    rho_hat: float = float("nan")
    norm_kind: str = "inf"
    mode: str = "interval"
    _vertices: Optional[List[Tuple[np.ndarray, np.ndarray]]] = field(default=None, repr=False)

    @property
    def num_vertices(self) -> int:
        return 2 ** int(np.sum(self.upper > self.lower))

    def iter_vertices(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        free = np.flatnonzero((self.upper > self.lower).reshape(-1))
        lo = self.lower.reshape(-1)
        hi = self.upper.reshape(-1)
        for pattern in itertools.product((0, 1), repeat=free.size):
            AB = lo.copy()
            sel = np.asarray(pattern, dtype=bool)
            AB[free] = np.where(sel, hi[free], lo[free])
            AB = AB.reshape(self.n, self.n + self.m)
            yield AB[:, :self.n], AB[:, self.n:]

    @property
    def vertices(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        if self._vertices is None:
            if self.num_vertices > MAX_VERTICES:
                raise ValueError(
                    f"{self.num_vertices} vertices exceed the limit {MAX_VERTICES}; "
                    "keep the bound in 'interval' mode and avoid enumerating it")
            self._vertices = list(self.iter_vertices())
        return self._vertices

    @property
    def N_c(self) -> int:
        return len(self.vertices)

    def contains(self, A, B, tol: float = 0.0) -> bool:
        AB = np.hstack([np.atleast_2d(A), np.atleast_2d(B)])
        return bool(np.all(AB >= self.lower - tol) and np.all(AB <= self.upper + tol))

    def describe(self) -> dict:
        return {"n": self.n, "m": self.m, "rho_hat": self.rho_hat, "norm_kind": self.norm_kind,
                "mode": self.mode, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


def build_vertex_set(rho_hat: float, n: int, m: int, mode: str = "full-box",
                     norm_kind: str = "inf") -> SystemBound:
    """Box ``|[A, B]_ij| <= rho_hat`` with its sign-pattern vertices.

    ``full-box`` enumerates the vertices immediately (refusing more than
    2**16); ``interval`` keeps only the bounds and enumerates on demand.
    """
    if rho_hat < 0:
        raise ValueError("rho_hat must be nonnegative")
    shape = (n, n + m)
    bound = SystemBound(np.full(shape, -float(rho_hat)), np.full(shape, float(rho_hat)), n, m,
                        rho_hat=float(rho_hat), norm_kind=norm_kind, mode=mode)
    if mode == "full-box":
        if bound.num_vertices > MAX_VERTICES:
            raise ValueError(
                f"full-box mode would create {bound.num_vertices} vertices (> {MAX_VERTICES}); "
                "use mode='interval'")
        _ = bound.vertices
    elif mode != "interval":
        raise ValueError(f"unknown vertex-set mode {mode!r}")
    return bound


def bound_from_intervals(lower, upper, rho_hat: float = float("nan"),
                         norm_kind: str = "inf") -> SystemBound:
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = lower.shape[0]
    return SystemBound(lower, upper, n, lower.shape[1] - n, rho_hat=rho_hat,
                       norm_kind=norm_kind, mode="interval")


def support_rows(E: Polytope, rows: np.ndarray) -> np.ndarray:
    """``max_{e in E} row' e`` for every row (robustification over the noise set)."""
    return support_many(E, rows)
