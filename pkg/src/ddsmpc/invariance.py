"""Feasible-state set, robust control invariant set and the first-step constraint.

All sets live in the space of *measured* states.  Robustness against the
measurement noise is imposed row-wise through support functions of the noise
set; robustness against the model uncertainty through the vertex matrices of
the system bound, with one input shared by all vertices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .geometry import (EmptyPolytopeError, Polytope, is_empty, pontryagin_diff, project,
                       remove_redundancy, same_set, slice_fixed, support_many)
from .scenario import ConstraintSet
from .uncertainty import SystemBound

logger = logging.getLogger(__name__)

FM_MAX_ELIMINATED = 1


class NoInvariantSetError(RuntimeError):
    """The invariance recursion produced an empty set."""


def empty_polytope(d: int) -> Polytope:
    return Polytope(np.zeros((1, d)), np.array([-1.0]))


def _project(P: Polytope, k: int) -> Polytope:
    method = "fm" if P.dim - k <= FM_MAX_ELIMINATED else "hull"
    return project(P, k, method=method)


def decision_polytope(C: ConstraintSet) -> Polytope:
    """``C`` restricted to ``u_L = 0`` over ``(x_meas, u_0..u_{L-1})``."""
    P = C.polytope
    m = C.m
    d = P.dim
    keep = np.arange(d - m)
    return slice_fixed(P, keep, np.arange(d - m, d), np.zeros(m))


def compute_ZL(C, n: int, pin_terminal_input: bool = True) -> Polytope:
    """Measured states for which some input sequence satisfies the sampled constraints.

    ``C`` is a :class:`ConstraintSet` (the last input block is pinned to zero
    when ``pin_terminal_input``) or a plain polytope over ``(x_meas, U)``.
    """
    if isinstance(C, ConstraintSet):
        P = decision_polytope(C) if pin_terminal_input else C.polytope
    else:
        P = C
    if is_empty(P):
        raise EmptyPolytopeError("constraint set is empty")
    return _project(remove_redundancy(P), n)


def _robust_rows(Gq: np.ndarray, gq: np.ndarray, bound: SystemBound, E: Polytope):
    """Rows over ``(x_meas, u)`` forcing the next measurement into ``{G_q x <= g_q}``.

    For vertex ``(A_j, B_j)``: ``G_q (A_j x + B_j u) <= g_q - h_E(G_q') - h_E(-(G_q A_j)')``.
    """
    h_next = support_many(E, Gq)
    blocks, rhs = [], []
    for A, B in bound.vertices:
        GA = Gq @ A
        blocks.append(np.hstack([GA, Gq @ B]))
        rhs.append(gq - h_next - support_many(E, -GA))
    return np.vstack(blocks), np.concatenate(rhs)


def invariant_step(Z_q: Polytope, Z_L: Polytope, bound: SystemBound, U_poly: Polytope,
                   E_poly: Polytope, coupled: Optional[Polytope] = None) -> Polytope:
    """One step of the robust invariance recursion.

    Without ``coupled`` the lifted set lives in ``(x, u)`` with ``u`` in the
    input set and ``x`` in ``Z_L`` and ``Z_q``.  With ``coupled`` (a polytope
    over ``(x, u_0, ..., u_{L-1})``, typically the sampled constraint set) the
    first input is the first block of a sequence that also satisfies it, so
    every state of the result admits one sequence meeting both requirements.

    Returns an explicitly empty polytope when no state qualifies.
    """
    n = Z_q.dim
    m = U_poly.dim
    Gr, gr = _robust_rows(Z_q.G, Z_q.g, bound, E_poly)
    if coupled is None:
        width = n + m
        parts = [
            (Gr, gr),
            (np.hstack([np.zeros((U_poly.nrows, n)), U_poly.G]), U_poly.g),
            (np.hstack([Z_L.G, np.zeros((Z_L.nrows, m))]), Z_L.g),
        ]
    else:
        width = coupled.dim
        pad = np.zeros((Gr.shape[0], width - n - m))
        parts = [(np.hstack([Gr, pad]), gr), (coupled.G, coupled.g)]
    parts.append((np.hstack([Z_q.G, np.zeros((Z_q.nrows, width - n))]), Z_q.g))
    lifted = Polytope(np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
    if is_empty(lifted):
        return empty_polytope(n)
    try:
        return _project(remove_redundancy(lifted), n)
    except EmptyPolytopeError:
        return empty_polytope(n)


@dataclass
class InvarianceResult:
    Z_L: Polytope
    Z_inf: Polytope
    C_R: Optional[Polytope]
    init_set: Optional[Polytope]
    iterations: int
    converged: bool
    trace: List[int] = field(default_factory=list)


def compute_Zinf(Z_L: Polytope, bound: SystemBound, U_poly: Polytope, E_poly: Polytope,
                 max_iter: int = 100, coupled: Optional[Polytope] = None,
                 tol: float = 1e-7) -> InvarianceResult:
    """Iterate :func:`invariant_step` from ``Z_L`` until two successive sets coincide.

    Raises:
        NoInvariantSetError: if an iterate is empty.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    Z = Z_L
    trace = [Z.nrows]
    for q in range(1, max_iter + 1):
        Z_next = invariant_step(Z, Z_L, bound, U_poly, E_poly, coupled=coupled)
        if is_empty(Z_next):
            raise NoInvariantSetError(
                f"no robust control invariant subset (iterate {q} is empty); the model "
                "bound or the noise set is too large for the constraints")
        trace.append(Z_next.nrows)
        logger.debug("invariance iteration %d: %d rows", q, Z_next.nrows)
        if same_set(Z_next, Z, tol):
            return InvarianceResult(Z_L, Z_next, None, None, q, True, trace)
        Z = Z_next
    logger.warning("invariance recursion did not converge in %d iterations", max_iter)
    return InvarianceResult(Z_L, Z, None, None, max_iter, False, trace)


def build_first_step_constraint(Z_inf: Polytope, bound: SystemBound, E_poly: Polytope,
                                n: int, m: int, L: int) -> Polytope:
    """Rows over ``(x_meas, u_0..u_L)`` keeping the next measurement in ``Z_inf``."""
    Gr, gr = _robust_rows(Z_inf.G, Z_inf.g, bound, E_poly)
    # reduce over (x, u_0) where the set is bounded, then pad the later inputs
    P = remove_redundancy(Polytope(Gr, gr))
    return Polytope(np.hstack([P.G, np.zeros((P.nrows, L * m))]), P.g)


def initial_condition_set(Z_inf: Polytope, E_poly: Polytope) -> Polytope:
    """True initial states whose measurement is in ``Z_inf`` for every noise value."""
    return pontryagin_diff(Z_inf, E_poly)
