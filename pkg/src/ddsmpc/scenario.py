"""Sampled state constraints over the prediction horizon.

Each sampled noise realisation yields one prediction matrix; requiring the
predicted states to satisfy the state constraints for every sample gives a
polytope in the stacked variable ``z = (x_meas; u_0..u_L)``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .datarep import HankelBundle, PredictionEnsemble, hankel_batch, prediction_matrices
from .geometry import EmptyPolytopeError, Polytope, _dedup, is_empty, remove_redundancy
from .uncertainty import NoiseModel, sample_noise_batch

logger = logging.getLogger(__name__)

MAX_REDRAW_FRACTION = 0.5


class ScenarioError(RuntimeError):
    """The sampled constraint set could not be built."""


def sample_complexity(d: int, risk: float, confidence: float) -> int:
    """Number of samples so that, with probability ``confidence``, the sampled
    solution violates the chance constraint with probability at most ``1 - risk``.

    ``ceil(5/(1-p) * (ln(4/(1-beta)) + d ln(40/(1-p))))``.
    """
    if d < 1:
        raise ValueError("decision dimension must be positive")
    if not (0.0 < risk < 1.0 and 0.0 < confidence < 1.0):
        raise ValueError("risk and confidence must lie strictly between 0 and 1")
    eps = 1.0 - risk
    val = 5.0 / eps * (math.log(4.0 / (1.0 - confidence)) + d * math.log(40.0 / eps))
    return int(math.ceil(val - 1e-9))


@dataclass
class ScenarioConfig:
    """Scenario parameters; ``num_samples`` overrides the sample-complexity bound."""

    risk: float = 0.8
    confidence: float = 0.999
    horizon: int = 6
    decision_dim: Optional[int] = None
    num_samples: Optional[int] = None

    def sample_bound(self, n: int, m: int) -> int:
        """The sample-complexity bound for this problem, ignoring any override."""
        d = self.decision_dim if self.decision_dim is not None else n + self.horizon * m
        return sample_complexity(d, self.risk, self.confidence)

    def sample_count(self, n: int, m: int) -> int:
        if self.num_samples is not None:
            if self.num_samples < 1:
                raise ValueError("num_samples must be positive")
            return int(self.num_samples)
        return self.sample_bound(n, m)


def draw_ensemble(bundle: HankelBundle, noise: NoiseModel, count: int, rng: np.random.Generator,
                  chunk: int = 4096, max_redraw_fraction: float = MAX_REDRAW_FRACTION
                  ) -> PredictionEnsemble:
    """``count`` prediction samples; rank-deficient draws are replaced by fresh ones.

    Each sample draws a noise sequence for the recorded data and an
    independent noise value for the current measurement.
    """
    N, n = bundle.N, bundle.n
    seqs, eps0s, Ms = [], [], []
    have = 0
    drawn = 0
    while have < count:
        k = min(chunk, count - have)
        eps_seq = sample_noise_batch(noise, k * N, rng).reshape(k, N, n)
        eps0 = sample_noise_batch(noise, k, rng)
        M, ok = prediction_matrices(bundle, hankel_batch(eps_seq, bundle.order))
        drawn += k
        seqs.append(eps_seq[ok])
        eps0s.append(eps0[ok])
        Ms.append(M[ok])
        have += int(ok.sum())
        if drawn > 10 and (drawn - have) > max_redraw_fraction * drawn:
            raise ScenarioError(
                f"{drawn - have} of {drawn} noise samples gave rank-deficient data; "
                "the recorded data are too weakly excited for this noise level")
    eps_seq = np.concatenate(seqs)[:count]
    return PredictionEnsemble(bundle, eps_seq, np.concatenate(eps0s)[:count],
                              np.concatenate(Ms)[:count], redraws=drawn - have)


def build_sampled_rows(ensemble: PredictionEnsemble, state_set: Polytope, horizon: int):
    """Rows ``G_x M_l z <= g_x + G_x M_l[:, :n] eps0`` for ``l = 1..L`` and every sample.

    Rows are ordered by step, then constraint row, then sample.
    """
    n = state_set.dim
    M = ensemble.M
    K, _, p = M.shape
    Ml = M[:, n:(horizon + 1) * n, :].reshape(K, horizon, n, p)
    Gx, gx = state_set.G, state_set.g
    rows = np.einsum("rn,klnp->lrkp", Gx, Ml)
    shift = np.einsum("rn,klnq,kq->lrk", Gx, Ml[..., :n], ensemble.eps0)
    rhs = gx[None, :, None] + shift
    return rows.reshape(-1, p), rhs.reshape(-1)


def input_rows(input_set: Polytope, n: int, m: int, horizon: int):
    """Input constraints on ``u_0..u_{L-1}`` in the stacked variable (``u_L`` is free)."""
    p = n + (horizon + 1) * m
    r = input_set.nrows
    G = np.zeros((horizon * r, p))
    for k in range(horizon):
        G[k * r:(k + 1) * r, n + k * m:n + (k + 1) * m] = input_set.G
    return G, np.tile(input_set.g, horizon)


@dataclass
class ConstraintSet:
    """Reduced sampled constraint polytope with provenance counters."""

    polytope: Polytope
    n: int
    m: int
    horizon: int
    num_samples: int
    raw_rows: int
    dedup_rows: int
    reduced_rows: int
    wall_time: float
    redraws: int = 0
    info: dict = field(default_factory=dict)

    @property
    def G(self):
        return self.polytope.G

    @property
    def g(self):
        return self.polytope.g


def assemble_constraint_set(rows, input_set: Polytope, n: int, m: int, horizon: int,
                            num_samples: int = 0, redraws: int = 0,
                            reduce: bool = True) -> ConstraintSet:
    """Stack sampled rows with input rows and remove redundant rows.

    Raises:
        ScenarioError: if the sampled set is empty.
    """
    t0 = time.perf_counter()
    G_s, g_s = rows
    G_u, g_u = input_rows(input_set, n, m, horizon)
    G = np.vstack([G_s, G_u])
    g = np.concatenate([g_s, g_u])
    raw = G.shape[0]
    P = Polytope(G, g)
    Gd, gd, _ = _dedup(P.G, P.g)
    dedup = Gd.shape[0]
    P = Polytope(Gd, gd, normalize=False)
    try:
        if reduce:
            P = remove_redundancy(P)
        elif is_empty(P):
            raise EmptyPolytopeError("empty")
    except EmptyPolytopeError:
        raise ScenarioError(
            "the sampled constraint set is empty: no (state, input) pair satisfies all "
            "sampled constraints (increase the risk level or shrink the noise)") from None
    wall = time.perf_counter() - t0
    logger.info("sampled constraints: %d raw, %d distinct, %d kept (%.1fs)", raw, dedup, P.nrows, wall)
    return ConstraintSet(P, n, m, horizon, num_samples, raw, dedup, P.nrows, wall, redraws)
