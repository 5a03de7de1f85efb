"""Expected tracking cost as a quadratic form in ``z = (x_meas; u_0..u_L)``.

``E[J(z)] ~= z'Sz + gamma'z + c`` with the expectation replaced by a sample
average over noise realisations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import block_diag

from .datarep import HankelBundle, hankel_batch, prediction_matrices
from .uncertainty import NoiseModel, sample_noise_batch

MAX_REDRAW_FRACTION = 0.5


class CostEstimationError(RuntimeError):
    pass


def _check_pd(name, W, strict=True):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] != W.shape[1] or not np.allclose(W, W.T, atol=1e-12):
        raise ValueError(f"{name} must be a symmetric matrix")
    lo = np.linalg.eigvalsh(W).min()
    if (strict and lo <= 0) or lo < 0:
        raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")
    return W


@dataclass(frozen=True)
class CostWeights:
    """Stage weights ``Q``, ``R``, terminal weight ``P`` and a constant state reference."""

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    x_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "Q", _check_pd("Q", self.Q))
        object.__setattr__(self, "R", _check_pd("R", self.R))
        object.__setattr__(self, "P", _check_pd("P", self.P))
        ref = np.zeros(self.n) if self.x_ref is None else np.asarray(self.x_ref, dtype=float)
        object.__setattr__(self, "x_ref", ref)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def state_weight(self, horizon: int) -> np.ndarray:
        """``diag(Q, ..., Q, P)`` over ``x_0..x_L``."""
        return block_diag(*([self.Q] * horizon + [self.P]))

    def input_weight(self, horizon: int) -> np.ndarray:
        """Weight on ``z``: zero on ``x_meas`` and ``u_L``, ``R`` on ``u_0..u_{L-1}``."""
        n, m = self.n, self.m
        return block_diag(np.zeros((n, n)), *([self.R] * horizon), np.zeros((m, m)))


@dataclass(frozen=True)
class CostForm:
    S: np.ndarray
    gamma: np.ndarray
    c: float
    samples: int
    redraws: int = 0

    def evaluate(self, x_meas, U) -> float:
        z = np.concatenate([np.ravel(x_meas), np.ravel(U)])
        return float(z @ self.S @ z + self.gamma @ z + self.c)


def estimate_cost_form(bundle: HankelBundle, noise: NoiseModel, weights: CostWeights,
                       count: int, rng: np.random.Generator, chunk: int = 2048) -> CostForm:
    """Sample-average quadratic form of the expected cost.

    For each sample the predicted states are ``M z - M w`` with
    ``w = (eps0; 0)``; the reference is subtracted from every predicted state.
    """
    n, m, L = bundle.n, bundle.m, bundle.horizon
    p = bundle.decision_dim
    Qt = weights.state_weight(L)
    Xref = np.tile(weights.x_ref, L + 1)
    S = np.zeros((p, p))
    gamma = np.zeros(p)
    c = 0.0
    have = drawn = 0
    while have < count:
        k = min(chunk, count - have)
        eps_seq = sample_noise_batch(noise, k * bundle.N, rng).reshape(k, bundle.N, n)
        eps0 = sample_noise_batch(noise, k, rng)
        M, ok = prediction_matrices(bundle, hankel_batch(eps_seq, bundle.order))
        drawn += k
        M, eps0 = M[ok], eps0[ok]
        have += M.shape[0]
        if drawn > 10 and drawn - have > MAX_REDRAW_FRACTION * drawn:
            raise CostEstimationError(
                f"{drawn - have} of {drawn} cost samples gave rank-deficient data")
        # offset r = M w + X_ref, predicted deviation = M z - r
        r = np.einsum("kij,kj->ki", M[:, :, :n], eps0) + Xref
        QM = Qt @ M
        S += np.einsum("kij,kil->jl", M, QM)
        gamma += -2.0 * np.einsum("kij,ki->j", QM, r)
        c += float(np.einsum("ki,ij,kj->", r, Qt, r))
    S = S / count
    S = 0.5 * (S + S.T) + weights.input_weight(L)
    return CostForm(S, gamma / count, c / count, count, drawn - have)


def evaluate_cost(form: CostForm, x_meas, U) -> float:
    """Expected cost ``z'Sz + gamma'z + c``."""
    return form.evaluate(x_meas, U)
