"""Hankel matrices, persistency of excitation and sampled prediction matrices.

A prediction matrix ``M`` maps the stacked vector ``(x0; u_0..u_L)`` to the
predicted state trajectory ``(x_0; x_1; ...; x_L)`` of one hypothesised
realisation of the noise that corrupted the recorded data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PINV_REL_TOL = 1e-10


class RankDeficient(np.linalg.LinAlgError):
    """The stacked data matrix does not have full row rank."""


def _as_sequence(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("sequence must be a list of vectors")
    return arr


@dataclass(frozen=True)
class TrajectoryData:
    """One recorded experiment: inputs ``(N, m)`` and noisy states ``(N, n)``."""

    inputs: np.ndarray
    noisy_states: np.ndarray

    def __post_init__(self):
        u = _as_sequence(self.inputs)
        x = _as_sequence(self.noisy_states)
        if u.shape[0] != x.shape[0]:
            raise ValueError(f"inputs ({u.shape[0]}) and states ({x.shape[0]}) differ in length")
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "noisy_states", x)

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.noisy_states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    def supports_horizon(self, L: int) -> bool:
        """Whether the Hankel data can have full row rank for horizon ``L``."""
        return self.N - L >= self.n + (L + 1) * self.m

    def to_csv(self, path: Union[str, Path]) -> None:
        header = ["k"] + [f"u_{i + 1}" for i in range(self.m)] + [
            f"xhat_{i + 1}" for i in range(self.n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.N):
                w.writerow([k] + [f"{v:.17g}" for v in self.inputs[k]]
                           + [f"{v:.17g}" for v in self.noisy_states[k]])

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "TrajectoryData":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        ucols = [i for i, h in enumerate(header) if h.startswith("u_")]
        xcols = [i for i, h in enumerate(header) if h.startswith("xhat_")]
        if not ucols or not xcols:
            raise ValueError(f"{path}: expected columns k,u_1..u_m,xhat_1..xhat_n")
        data = np.array(body, dtype=float)
        return cls(data[:, ucols], data[:, xcols])


def build_hankel(seq, order: int) -> np.ndarray:
    """Hankel matrix of ``order`` block rows; column ``j`` stacks ``seq[j:j+order]``."""
    arr = _as_sequence(seq)
    N, m = arr.shape
    if order < 1 or order > N:
        raise ValueError(f"Hankel order {order} must lie in [1, N={N}]")
    windows = sliding_window_view(arr, order, axis=0)  # (N-order+1, m, order)
    return np.ascontiguousarray(windows.transpose(0, 2, 1).reshape(N - order + 1, order * m).T)


def hankel_batch(seqs: np.ndarray, order: int) -> np.ndarray:
    """Hankel matrices of a batch of sequences ``(K, N, n)`` -> ``(K, order*n, N-order+1)``."""
    K, N, n = seqs.shape
    windows = sliding_window_view(seqs, order, axis=1)  # (K, N-order+1, n, order)
    return windows.transpose(0, 1, 3, 2).reshape(K, N - order + 1, order * n).transpose(0, 2, 1)


def check_pe(seq, order: int, rank_tol: float = 1e-9) -> bool:
    """Persistency of excitation of the given order (numerical rank test)."""
    arr = _as_sequence(seq)
    N, m = arr.shape
    if N == 0:
        raise ValueError("empty sequence")
    if order < 1 or order * m > N - order + 1:
        return False
    s = np.linalg.svd(build_hankel(arr, order), compute_uv=False)
    if s[0] == 0.0:
        return False
    return int(np.sum(s > rank_tol * s[0])) == order * m


@dataclass(frozen=True)
class HankelBundle:
    """Order ``L+1`` Hankel matrices of the recorded inputs and noisy states."""

    H_u: np.ndarray
    H_xhat: np.ndarray
    order: int
    n: int
    m: int
    N: int

    @classmethod
    def from_data(cls, data: TrajectoryData, horizon: int) -> "HankelBundle":
        order = horizon + 1
        return cls(build_hankel(data.inputs, order), build_hankel(data.noisy_states, order),
                   order, data.n, data.m, data.N)

    @property
    def horizon(self) -> int:
        return self.order - 1

    @property
    def columns(self) -> int:
        return self.N - self.order + 1

    @property
    def decision_dim(self) -> int:
        return self.n + self.order * self.m


def _stacked(bundle: HankelBundle, Hdiff: np.ndarray) -> np.ndarray:
    K = Hdiff.shape[0]
    Hu = np.broadcast_to(bundle.H_u, (K,) + bundle.H_u.shape)
    return np.concatenate([Hdiff[:, : bundle.n, :], Hu], axis=1)


def prediction_matrices(bundle: HankelBundle, H_eps: np.ndarray):
    """Batched prediction matrices.

    Returns ``(M, ok)`` with ``M`` of shape ``(K, (L+1)n, n+(L+1)m)`` and a
    boolean mask of samples whose stacked matrix has full row rank (rows of
    ``M`` for rank-deficient samples are NaN).
    """
    H_eps = np.asarray(H_eps, dtype=float)
    if H_eps.ndim == 2:
        H_eps = H_eps[None]
    Hdiff = bundle.H_xhat[None] - H_eps
    D = _stacked(bundle, Hdiff)
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    ok = s[:, -1] > PINV_REL_TOL * s[:, 0]
    s_inv = np.where(ok[:, None], 1.0 / np.where(s > 0, s, 1.0), np.nan)
    pinv = np.einsum("kji,kj,klj->kil", Vt, s_inv, U)
    M = Hdiff @ pinv
    return M, ok


def build_prediction_matrix(bundle: HankelBundle, H_eps: np.ndarray, n: Optional[int] = None) -> np.ndarray:
    """``M = (H_xhat - H_eps) D^+`` with ``D = [first n rows of (H_xhat - H_eps); H_u]``.

    Raises:
        RankDeficient: if ``D`` is numerically rank deficient (non-PE data or
            a pathological noise sample).
    """
    if n is not None and n != bundle.n:
        raise ValueError(f"state dimension {n} does not match the data ({bundle.n})")
    M, ok = prediction_matrices(bundle, H_eps)
    if not ok[0]:
        p = bundle.decision_dim
        raise RankDeficient(
            f"stacked matrix [first {bundle.n} state rows; input Hankel] ({p} x {bundle.columns}) "
            f"is rank deficient; need rank {p} (data not persistently exciting or degenerate noise sample)")
    return M[0]


@dataclass(frozen=True)
class PredictionSample:
    """One sampled noise realisation and its prediction matrix."""

    H_eps: np.ndarray
    eps0: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        for name in ("H_eps", "eps0", "M"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def predict_trajectory(sample: PredictionSample, x_meas, U) -> np.ndarray:
    """Stacked prediction ``M (x_meas - eps0; U)``."""
    x_meas = np.asarray(x_meas, dtype=float).reshape(-1)
    U = np.asarray(U, dtype=float).reshape(-1)
    z = np.concatenate([x_meas - sample.eps0, U])
    if z.size != sample.M.shape[1]:
        raise ValueError(f"expected {sample.M.shape[1] - x_meas.size} input entries, got {U.size}")
    return sample.M @ z


class PredictionEnsemble:
    """Stacked prediction samples ``(eps_seq, eps0, M)`` sharing one data bundle.

    Stores the noise sequences rather than their Hankel matrices; indexing
    returns a :class:`PredictionSample`.
    """

    def __init__(self, bundle: HankelBundle, eps_seq: np.ndarray, eps0: np.ndarray,
                 M: np.ndarray, redraws: int = 0):
        self.bundle = bundle
        self.eps_seq = eps_seq
        self.eps0 = eps0
        self.M = M
        self.redraws = redraws

    def __len__(self) -> int:
        return self.M.shape[0]

    def __getitem__(self, i: int) -> PredictionSample:
        H = build_hankel(self.eps_seq[i], self.bundle.order)
        return PredictionSample(H, self.eps0[i], self.M[i])

    def __iter__(self) -> Iterator[PredictionSample]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_samples(cls, bundle: HankelBundle, samples: Sequence[PredictionSample]):
        # noise sequences are not recoverable from a Hankel matrix alone; keep them via
        # the first block row and the last column
        seqs = []
        for s in samples:
            H = s.H_eps
            n = bundle.n
            first = H[:n].T
            tail = H[:, -1].reshape(bundle.order, n)[1:]
            seqs.append(np.vstack([first, tail]))
        return cls(bundle, np.array(seqs), np.array([s.eps0 for s in samples]),
                   np.array([s.M for s in samples]))
