"""Dense LP and strictly convex QP solvers.

Both solvers work on the inequality form ``A x <= b`` with free variables.
The LP is a vertex-following (active-set) simplex: a vertex is described by
``d`` linearly independent active rows and each pivot swaps one of them.
Feasibility is obtained from an auxiliary problem that minimises the largest
constraint violation, which also yields a Farkas certificate when the
constraints are inconsistent.  Directions along which every row is constant
(lineality) are carried as pseudo-rows so that the method does not need a
pointed feasible set.

The QP is a primal active-set method (Nocedal & Wright, Alg. 16.3) started
from an LP-feasible vertex or from a caller-provided working set.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9
OPT_TOL = 1e-10
DIR_TOL = 1e-12


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


def _as_problem_arrays(A, b, d):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.size == 0:
        A = A.reshape(0, d)
    if A.ndim != 2 or A.shape[1] != d or A.shape[0] != b.shape[0]:
        raise ValueError(f"inconsistent constraint shapes A{A.shape}, b{b.shape}, d={d}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("constraint data must be finite")
    return A, b


@dataclass(frozen=True)
class LinearProgram:
    """``min cost @ x  s.t.  A @ x <= b``."""

    cost: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=float).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise ValueError("cost must be finite")
        A, b = _as_problem_arrays(self.A, self.b, c.shape[0])
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.cost.shape[0]


@dataclass(frozen=True)
class QuadraticProgram:
    """``min 0.5 x'Hx + f'x  s.t.  A x <= b``."""

    hessian: np.ndarray
    linear: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.linear, dtype=float).reshape(-1)
        H = np.asarray(self.hessian, dtype=float)
        d = f.shape[0]
        if H.shape != (d, d):
            raise ValueError(f"hessian shape {H.shape} does not match d={d}")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(f))):
            raise ValueError("objective data must be finite")
        scale = max(1.0, float(np.abs(H).max(initial=0.0)))
        if np.abs(H - H.T).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("hessian is not symmetric")
        A, b = _as_problem_arrays(self.A, self.b, d)
        object.__setattr__(self, "hessian", 0.5 * (H + H.T))
        object.__setattr__(self, "linear", f)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.linear.shape[0]


@dataclass
class SolveResult:
    status: Status
    point: Optional[np.ndarray] = None
    objective: float = float("nan")
    # Optimal: multipliers y >= 0 with grad + A'y = 0.
    # Infeasible: Farkas vector y >= 0 with A'y = 0, b'y < 0.
    dual: Optional[np.ndarray] = None
    ray: Optional[np.ndarray] = None
    active: tuple = ()
    iterations: int = 0
    exited_early: bool = field(default=False, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class _Failure(Exception):
    pass


def _null_space(K: np.ndarray, d: int) -> np.ndarray:
    if K.shape[0] == 0:
        return np.eye(d)
    _, s, vt = np.linalg.svd(K, full_matrices=True)
    rank = int(np.sum(s > 1e-12 * max(1.0, s[0])))
    return vt[rank:].T


class _VertexSimplex:
    """Active-set simplex on ``min c'x, Ax <= b`` from a feasible point."""

    def __init__(self, c, A, b, max_iter, stop_below=None):
        self.c = c
        self.A = A
        self.b = b
        self.r, self.d = A.shape
        self.norms = np.maximum(np.linalg.norm(A, axis=1), 1e-300)
        self.max_iter = max_iter
        self.stop_below = stop_below
        self.iterations = 0
        self.bscale = 1.0 + (np.abs(b).max() if b.size else 0.0)
        self.cscale = 1.0 + np.abs(c).max(initial=0.0)

    def _system(self, W, pseudo):
        rows = [self.A[W]] if W else []
        rows += [np.asarray(pseudo, dtype=float).reshape(-1, self.d)] if pseudo else []
        return np.vstack(rows) if rows else np.zeros((0, self.d))

    def _blocking(self, x, p, exclude, bland):
        Ap = self.A @ p
        thresh = DIR_TOL * self.norms * np.linalg.norm(p)
        mask = Ap > thresh
        if exclude:
            mask[list(exclude)] = False
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return None, None
        slack = np.maximum(self.b[idx] - self.A[idx] @ x, 0.0)
        t = slack / Ap[idx]
        tmin = t.min()
        ties = idx[t <= tmin + 1e-12 * (1.0 + tmin)]
        if bland or ties.size == 1:
            return int(ties[0]), float(tmin)
        # most numerically stable pivot among ties
        j = ties[np.argmax(Ap[ties] / self.norms[ties])]
        return int(j), float(tmin)

    def crash(self, x, W):
        """Walk from feasible ``x`` to a vertex; returns (x, W, pseudo, anchors) or a ray."""
        W = list(W)
        pseudo: list = []
        anchors: list = []
        d = self.d
        while len(W) + len(pseudo) < d:
            self.iterations += 1
            if self.iterations > self.max_iter:
                raise _Failure("iteration cap during crash")
            K = self._system(W, pseudo)
            N = _null_space(K, d)
            if N.shape[1] == 0:
                break
            p = -N @ (N.T @ self.c)
            descent = np.linalg.norm(p) > 1e-12 * self.cscale
            if descent:
                j, t = self._blocking(x, p, W, False)
                if j is None:
                    return None, p
                x = x + t * p
                W.append(j)
            else:
                p = N[:, 0]
                moved = False
                for sgn in (1.0, -1.0):
                    j, t = self._blocking(x, sgn * p, W, False)
                    if j is not None:
                        x = x + t * sgn * p
                        W.append(j)
                        moved = True
                        break
                if not moved:
                    pseudo.append(p / np.linalg.norm(p))
                    anchors.append(float(pseudo[-1] @ x))
            if self.stop_below is not None and self.c @ x < self.stop_below:
                return (x, W, pseudo, anchors, True), None
        return (x, W, pseudo, anchors, False), None

    def iterate(self, x, W, pseudo, anchors):
        d = self.d
        bland = False
        degenerate = 0
        npseudo = len(pseudo)
        while True:
            self.iterations += 1
            if self.iterations > self.max_iter:
                raise _Failure("iteration cap")
            K = self._system(W, pseudo)
            try:
                lam = np.linalg.solve(K.T, -self.c)
            except np.linalg.LinAlgError as exc:
                raise _Failure("singular basis") from exc
            lam_rows = lam[: len(W)]
            neg = np.flatnonzero(lam_rows < -OPT_TOL * self.cscale)
            if neg.size == 0:
                return x, W, lam_rows, None
            if bland:
                i = int(neg[np.argmin(np.asarray(W)[neg])])
            else:
                i = int(neg[np.argmin(lam_rows[neg])])
            # edge direction from the rows that stay: well conditioned even when
            # the dropped row is nearly parallel to one of them
            N = _null_space(np.delete(K, i, axis=0), d)
            p = -N @ (N.T @ K[i])
            if N.shape[1] != 1 or np.linalg.norm(p) < 1e-12 * np.linalg.norm(K[i]):
                e = np.zeros(d)
                e[i] = -1.0
                p = np.linalg.solve(K, e)
            j, t = self._blocking(x, p, W, bland)
            if j is None:
                return x, W, None, p
            if t <= 1e-14 * (1.0 + np.abs(x).max()):
                degenerate += 1
                if degenerate > 2 * d + 5:
                    bland = True
            else:
                degenerate = 0
            W[i] = j
            K = self._system(W, pseudo)
            rhs = np.concatenate([self.b[W], np.asarray(anchors[:npseudo])])
            try:
                x_new = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError as exc:
                raise _Failure("singular basis after pivot") from exc
            x_step = x + t * p
            ok = np.all(np.isfinite(x_new)) and (
                np.max(self.A @ x_new - self.b) <= FEAS_TOL * self.bscale)
            x = x_new if ok else x_step
            if self.stop_below is not None and self.c @ x < self.stop_below:
                return x, W, "early", None

    def run(self, x, W):
        crashed, ray = self.crash(x, W)
        if ray is not None:
            return SolveResult(Status.UNBOUNDED, ray=ray, iterations=self.iterations)
        x, W, pseudo, anchors, early = crashed
        if early:
            return SolveResult(Status.OPTIMAL, point=x, objective=float(self.c @ x),
                               active=tuple(W), iterations=self.iterations, exited_early=True)
        x, W, lam, ray = self.iterate(x, W, pseudo, anchors)
        if ray is not None:
            return SolveResult(Status.UNBOUNDED, point=x, ray=ray, iterations=self.iterations)
        if isinstance(lam, str):
            return SolveResult(Status.OPTIMAL, point=x, objective=float(self.c @ x),
                               active=tuple(W), iterations=self.iterations, exited_early=True)
        y = np.zeros(self.r)
        y[W] = np.maximum(lam, 0.0)
        return SolveResult(Status.OPTIMAL, point=x, objective=float(self.c @ x), dual=y,
                           active=tuple(W), iterations=self.iterations)


def _independent_subset(A, rows, d):
    chosen: list = []
    for j in rows:
        trial = chosen + [j]
        if len(trial) > d:
            break
        s = np.linalg.svd(A[trial], compute_uv=False)
        if s[-1] > 1e-9 * max(1.0, s[0]):
            chosen = trial
    return chosen


def _feasible_start(A, b, max_iter):
    """Phase 1: minimise the largest violation t over (x, t).

    Returns (x, hint_rows, None) or (None, None, farkas_y).
    """
    r, d = A.shape
    Aa = np.zeros((r + 1, d + 1))
    Aa[:r, :d] = A
    Aa[:r, d] = -1.0
    Aa[r, d] = -1.0
    ba = np.concatenate([b, [0.0]])
    ca = np.zeros(d + 1)
    ca[d] = 1.0
    t0 = max(0.0, float(np.max(-b)))
    start = np.zeros(d + 1)
    start[d] = t0
    hint = [int(np.argmax(-b))] if t0 > 0 else [r]
    core = _VertexSimplex(ca, Aa, ba, max_iter)
    res = core.run(start, hint)
    if res.status is not Status.OPTIMAL:
        raise _Failure(f"auxiliary problem ended with {res.status}")
    tstar = res.point[d]
    if tstar > FEAS_TOL * (1.0 + np.abs(b).max(initial=0.0)):
        return None, None, res.dual[:r].copy(), res.iterations
    x = res.point[:d]
    rows = [j for j in res.active if j < r]
    return x, _independent_subset(A, rows, d), None, res.iterations


def solve_lp(lp: LinearProgram, warm_start: Optional[Sequence[int]] = None,
             max_iter: Optional[int] = None, stop_below: Optional[float] = None) -> SolveResult:
    """Solve ``min c'x s.t. Ax <= b``.

    ``warm_start`` is a list of row indices (typically ``result.active`` of a
    previous solve on the same constraints); it is used only if it defines a
    feasible point.  ``stop_below`` ends the search as soon as a feasible
    point with objective below the threshold is reached (``exited_early``).
    """
    c, A, b = lp.cost, lp.A, lp.b
    r, d = A.shape
    cap = max_iter if max_iter is not None else 50 * (r + d)
    if d == 0:
        if np.all(b >= -FEAS_TOL):
            return SolveResult(Status.OPTIMAL, point=np.zeros(0), objective=0.0, dual=np.zeros(r))
        y = np.zeros(r)
        y[int(np.argmin(b))] = 1.0
        return SolveResult(Status.INFEASIBLE, dual=y)
    tol_feas = FEAS_TOL * (1.0 + (np.abs(b).max() if r else 0.0))
    x0 = None
    hint: list = []
    iters = 0
    try:
        if warm_start:
            W = [int(j) for j in warm_start if 0 <= int(j) < r]
            if W:
                xw = np.linalg.lstsq(A[W], b[W], rcond=None)[0]
                if np.all(A @ xw <= b + tol_feas):
                    x0, hint = xw, _independent_subset(A, W, d)
        if x0 is None:
            if r == 0 or np.all(b >= 0.0):
                x0 = np.zeros(d)
                hint = []
            else:
                x0, hint, farkas, iters = _feasible_start(A, b, cap)
                if x0 is None:
                    return SolveResult(Status.INFEASIBLE, dual=farkas, iterations=iters)
        core = _VertexSimplex(c, A, b, cap, stop_below)
        core.iterations = iters
        return core.run(x0, hint)
    except _Failure as exc:
        logger.warning("LP solve failed: %s", exc)
        return SolveResult(Status.NUMERICAL_FAILURE)


def find_feasible_point(A, b) -> SolveResult:
    """Phase-1 only; returns a feasible vertex/point or an Infeasible certificate."""
    A = np.asarray(A, dtype=float)
    return solve_lp(LinearProgram(np.zeros(A.shape[1]), A, b))


# ---------------------------------------------------------------------------
# QP


def _eqp_step(H, g, Aw):
    """Solve min 0.5 p'Hp + g'p  s.t. Aw p = 0 by the null-space method; returns p.

    A full-rank working set of ``d`` rows gives exactly ``p = 0``, which a KKT
    solve with nearly parallel rows does not.
    """
    d = H.shape[0]
    k = Aw.shape[0]
    if k == 0:
        return np.linalg.solve(H, -g)
    if k >= d:
        return np.zeros(d)
    Qf, _ = np.linalg.qr(Aw.T, mode="complete")
    Z = Qf[:, k:]
    return -Z @ np.linalg.solve(Z.T @ H @ Z, Z.T @ g)


def _check_psd(H):
    d = H.shape[0]
    if d == 0:
        return H
    w = np.linalg.eigvalsh(H)
    norm = max(np.abs(w).max(), 1e-300)
    if w[0] < -1e-10 * norm:
        raise ValueError(f"hessian is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    if w[0] <= 1e-12 * norm:
        ridge = 1e-9 * np.trace(H) / d
        logger.info("singular hessian: adding ridge %.3e", ridge)
        H = H + ridge * np.eye(d)
    return H


def solve_qp(qp: QuadraticProgram, warm_start: Optional[Sequence[int]] = None,
             max_iter: Optional[int] = None) -> SolveResult:
    """Primal active-set solve of ``min 0.5 x'Hx + f'x s.t. Ax <= b``.

    ``warm_start`` is a working set from a previous solve; it is used when the
    equality-constrained minimiser on it is feasible, otherwise the solve
    starts from an LP-feasible vertex.
    """
    H = _check_psd(qp.hessian)
    f, A, b = qp.linear, qp.A, qp.b
    r, d = A.shape
    cap = max_iter if max_iter is not None else 50 * (r + d)
    tol_feas = FEAS_TOL * (1.0 + (np.abs(b).max() if r else 0.0))
    norms = np.maximum(np.linalg.norm(A, axis=1), 1e-300) if r else np.zeros(0)

    x = None
    W: list = []
    iters = 0
    try:
        x_free = np.linalg.solve(H, -f)
        if r == 0 or np.all(A @ x_free <= b + tol_feas):
            x, W = x_free, []
        elif warm_start:
            Wt = _independent_subset(A, [int(j) for j in warm_start if 0 <= int(j) < r], d)
            if Wt:
                kkt_x = _eq_constrained_min(H, f, A[Wt], b[Wt])
                if kkt_x is not None and np.all(A @ kkt_x <= b + tol_feas):
                    x, W = kkt_x, Wt
        if x is None:
            start = solve_lp(LinearProgram(np.zeros(d), A, b), max_iter=cap)
            if start.status is Status.INFEASIBLE:
                return SolveResult(Status.INFEASIBLE, dual=start.dual, iterations=start.iterations)
            if start.status is not Status.OPTIMAL:
                return SolveResult(Status.NUMERICAL_FAILURE)
            x, W = start.point, list(start.active)
            iters = start.iterations
    except np.linalg.LinAlgError:
        return SolveResult(Status.NUMERICAL_FAILURE)

    fscale = 1.0 + np.abs(f).max(initial=0.0)
    degenerate = 0
    while True:
        iters += 1
        if iters > cap:
            logger.warning("QP iteration cap reached")
            return SolveResult(Status.NUMERICAL_FAILURE, point=x, iterations=iters)
        g = H @ x + f
        Aw = A[W] if W else np.zeros((0, d))
        try:
            p = _eqp_step(H, g, Aw)
        except np.linalg.LinAlgError:
            return SolveResult(Status.NUMERICAL_FAILURE, point=x, iterations=iters)
        if np.linalg.norm(p) <= 1e-12 * (1.0 + np.linalg.norm(x)):
            if not W:
                break
            lam = np.linalg.lstsq(Aw.T, -g, rcond=None)[0]
            neg = np.flatnonzero(lam < -1e-11 * fscale)
            if neg.size == 0:
                break
            i = int(neg[np.argmin(lam[neg])]) if degenerate <= 2 * d + 5 else int(
                neg[np.argmin(np.asarray(W)[neg])])
            W.pop(i)
            continue
        Ap = A @ p
        mask = Ap > DIR_TOL * norms * np.linalg.norm(p)
        if W:
            mask[W] = False
        idx = np.flatnonzero(mask)
        alpha, block = 1.0, None
        if idx.size:
            t = np.maximum(b[idx] - A[idx] @ x, 0.0) / Ap[idx]
            k = int(np.argmin(t))
            if t[k] < 1.0:
                alpha, block = float(t[k]), int(idx[k])
        x = x + alpha * p
        if block is not None:
            W.append(block)
            degenerate = degenerate + 1 if alpha == 0.0 else 0

    y = np.zeros(r)
    if W:
        lam = np.linalg.lstsq(A[W].T, -(H @ x + f), rcond=None)[0]
        y[W] = np.maximum(lam, 0.0)
    obj = float(0.5 * x @ H @ x + f @ x)
    return SolveResult(Status.OPTIMAL, point=x, objective=obj, dual=y, active=tuple(W),
                       iterations=iters)


def _eq_constrained_min(H, f, Aw, bw):
    d = H.shape[0]
    k = Aw.shape[0]
    kkt = np.zeros((d + k, d + k))
    kkt[:d, :d] = H
    kkt[:d, d:] = Aw.T
    kkt[d:, :d] = Aw
    try:
        sol = np.linalg.solve(kkt, np.concatenate([-f, bw]))
    except np.linalg.LinAlgError:
        return None
    return sol[:d]


def kkt_residual(qp: QuadraticProgram, res: SolveResult) -> float:
    """Stationarity residual ``||Hx + f + A'y||_inf`` of a QP solution."""
    return float(np.abs(qp.hessian @ res.point + qp.linear + qp.A.T @ res.dual).max(initial=0.0))


# ---------------------------------------------------------------------------
# debug dumps


def _fmt_row(values) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def dump_lp(lp: LinearProgram) -> str:
    """Text dump: ``d r`` header, cost row, then ``r`` rows of ``a_i | b_i``."""
    lines = [f"{lp.dim} {lp.A.shape[0]}", _fmt_row(lp.cost)]
    lines += [_fmt_row(np.append(a, bi)) for a, bi in zip(lp.A, lp.b)]
    return "\n".join(lines) + "\n"


def load_lp(text: str) -> LinearProgram:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    d, r = (int(t) for t in lines[0].split())
    c = np.array(lines[1].split(), dtype=float)
    rows = np.array([ln.split() for ln in lines[2:2 + r]], dtype=float).reshape(r, d + 1)
    return LinearProgram(c, rows[:, :d], rows[:, d])


def dump_qp(qp: QuadraticProgram) -> str:
    """Text dump: ``d r`` header, ``d`` hessian rows, linear row, constraint rows."""
    lines = [f"{qp.dim} {qp.A.shape[0]}"]
    lines += [_fmt_row(h) for h in qp.hessian]
    lines.append(_fmt_row(qp.linear))
    lines += [_fmt_row(np.append(a, bi)) for a, bi in zip(qp.A, qp.b)]
    return "\n".join(lines) + "\n"


def load_qp(text: str) -> QuadraticProgram:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    d, r = (int(t) for t in lines[0].split())
    H = np.array([ln.split() for ln in lines[1:1 + d]], dtype=float).reshape(d, d)
    f = np.array(lines[1 + d].split(), dtype=float)
    rows = np.array([ln.split() for ln in lines[2 + d:2 + d + r]], dtype=float).reshape(r, d + 1)
    return QuadraticProgram(H, f, rows[:, :d], rows[:, d])
