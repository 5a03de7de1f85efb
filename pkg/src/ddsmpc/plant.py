"""Ground-truth linear plant used to generate data and close the loop.

The true matrices live only here; the controller side never sees them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .datarep import TrajectoryData, check_pe
from .geometry import Polytope, box, sample_uniform
from .uncertainty import NoiseModel, sample_noise, sample_noise_sequence

REFERENCE_A = np.array([[1.0, 0.013], [-0.080, 0.996]])
REFERENCE_B = np.array([[4.798], [0.064]])


class DataCollectionError(RuntimeError):
    """No persistently exciting experiment could be recorded."""


@dataclass(frozen=True)
class PlantModel:
    """``x+ = A x + B u`` with state measurements ``x + eps``."""

    A: np.ndarray
    B: np.ndarray
    noise: NoiseModel

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape}")
        if self.noise.n != A.shape[0]:
            raise ValueError("noise dimension does not match the state dimension")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def reference_plant(noise_bound: float, std_factor: float = 1.0 / 3.0) -> PlantModel:
    """Second-order benchmark plant with infinity-norm bounded measurement noise."""
    return PlantModel(REFERENCE_A, REFERENCE_B, NoiseModel.box(noise_bound, 2, std_factor))


def step(plant: PlantModel, x, u, rng: np.random.Generator):
    """One transition; returns ``(x_next, measured x_next)``."""
    x_next = plant.A @ np.asarray(x, dtype=float) + plant.B @ np.atleast_1d(np.asarray(u, dtype=float))
    return x_next, x_next + sample_noise(plant.noise, rng)


def rollout_exact(plant: PlantModel, x0, U) -> np.ndarray:
    """Noise-free state trajectory ``(len(U)+1, n)`` for inputs ``U`` of shape ``(T, m)``."""
    U = np.asarray(U, dtype=float).reshape(-1, plant.m)
    xs = np.empty((U.shape[0] + 1, plant.n))
    xs[0] = x0
    for k, u in enumerate(U):
        xs[k + 1] = plant.A @ xs[k] + plant.B @ u
    return xs


def collect_data(plant: PlantModel, N: int, horizon: int, rng: np.random.Generator,
                 input_set: Optional[Polytope] = None, x0=None,
                 input_law: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None,
                 max_retries: int = 20) -> TrajectoryData:
    """Record ``N`` inputs and noisy states.

    Inputs are uniform on ``input_set`` (default ``|u| <= 1``) unless
    ``input_law(rng, N)`` is given.  The input sequence is redrawn until it is
    persistently exciting of order ``n + horizon + 1``.
    """
    n, m = plant.n, plant.m
    order = n + horizon + 1
    if order * m > N - order + 1:
        raise DataCollectionError(
            f"N={N} is too short for persistency of excitation of order {order} "
            f"(need N >= {order * (m + 1) - 1})")
    if input_set is None:
        input_set = box(-np.ones(m), np.ones(m))
    for _ in range(max_retries):
        if input_law is not None:
            U = np.asarray(input_law(rng, N), dtype=float).reshape(N, m)
        else:
            U = sample_uniform(input_set, N, rng)
        if check_pe(U, order):
            break
    else:
        raise DataCollectionError(f"no persistently exciting input after {max_retries} draws")
    x_init = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    xs = rollout_exact(plant, x_init, U[:-1])
    eps = sample_noise_sequence(plant.noise, N, rng)
    return TrajectoryData(U, xs + eps)
