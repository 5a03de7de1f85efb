"""Offline synthesis of the controller artifact and the online optimal control step."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import __version__
from .cost import CostForm, CostWeights, estimate_cost_form
from .datarep import HankelBundle, TrajectoryData, check_pe
from .geometry import (Polytope, from_text, intersect, is_empty, slice_fixed, to_text)
from .invariance import (InvarianceResult, build_first_step_constraint, compute_Zinf, compute_ZL,
                         decision_polytope, initial_condition_set)
from .scenario import (ConstraintSet, ScenarioConfig, assemble_constraint_set, build_sampled_rows,
                       draw_ensemble)
from .solvers import QuadraticProgram, Status, find_feasible_point, solve_qp
from .uncertainty import (NoiseModel, SearchConfig, SystemBound, bound_from_intervals,
                          build_vertex_set, estimate_entry_bounds, estimate_rho)

logger = logging.getLogger(__name__)

ARTIFACT_HEADER = "# ddsmpc controller artifact v1"


class SynthesisError(RuntimeError):
    """A synthesis stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class ControllerConfig:
    """Everything the offline phase needs besides the recorded data."""

    state_set: Polytope
    input_set: Polytope
    noise: NoiseModel
    weights: CostWeights
    horizon: int = 6
    risk: float = 0.8
    confidence: float = 0.999
    num_samples: Optional[int] = None
    saa_count: int = 10_000
    bound: Optional[SystemBound] = None
    bound_mode: str = "centered"
    rho_safety: float = 1.1
    norm_kind: str = "inf"
    invariance: str = "coupled"
    max_invariance_iter: int = 100
    seed: int = 0

    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(self.risk, self.confidence, self.horizon, num_samples=self.num_samples)


@dataclass
class ControllerArtifact:
    """Frozen result of the offline phase; contains no plant matrices."""

    n: int
    m: int
    L: int
    N: int
    cost: CostForm
    constraints: ConstraintSet
    first_step: Polytope
    Z_L: Polytope
    Z_inf: Polytope
    init_set: Polytope
    scenario: ScenarioConfig
    noise: dict
    bound: dict
    seed: int
    version: str = __version__
    report: Dict[str, str] = field(default_factory=dict)

    @property
    def decision_dim(self) -> int:
        return self.n + (self.L + 1) * self.m

    def online_polytope(self) -> Polytope:
        """Sampled and first-step constraints over ``(x_meas, u_0..u_{L-1})`` with ``u_L = 0``."""
        both = intersect(self.constraints.polytope, self.first_step)
        d = self.decision_dim
        return slice_fixed(both, np.arange(d - self.m), np.arange(d - self.m, d), np.zeros(self.m))


# ---------------------------------------------------------------------------
# synthesis


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SynthesisError:
        raise
    except Exception as exc:  # tag and re-raise
        raise SynthesisError(name, str(exc)) from exc


def synthesize(data: TrajectoryData, config: ControllerConfig) -> ControllerArtifact:
    """Run the offline phase: data check, sampled constraints, cost, invariant set.

    Raises:
        SynthesisError: tagged with the failing stage.
    """
    n, m, L = data.n, data.m, config.horizon
    order = n + L + 1
    report: Dict[str, str] = {}
    timings: Dict[str, float] = {}

    def timed(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        out = _stage(name, fn, *args, **kwargs)
        timings[name] = time.perf_counter() - t0
        return out

    if config.invariance not in ("coupled", "decoupled"):
        raise SynthesisError("config", f"unknown invariance mode {config.invariance!r}")
    if not check_pe(data.inputs, order):
        raise SynthesisError("data", f"inputs are not persistently exciting of order n+L+1 = {order}")
    streams = np.random.SeedSequence(config.seed).spawn(3)
    rng_scn, rng_cost, rng_bound = (np.random.default_rng(s) for s in streams)

    bundle = HankelBundle.from_data(data, L)
    scenario = config.scenario()
    Ns = timed("sample-complexity", scenario.sample_count, n, m)
    report["num_samples"] = str(Ns)
    bound_Ns = scenario.sample_bound(n, m)
    report["sample_bound"] = str(bound_Ns)
    if Ns != bound_Ns:
        report["sample_note"] = (f"explicit override: {Ns} samples drawn where the sample-complexity "
                                 f"bound for d = {n + L * m} gives {bound_Ns}")

    ens = timed("ensemble", draw_ensemble, bundle, config.noise, Ns, rng_scn)
    cost = timed("cost", estimate_cost_form, bundle, config.noise, config.weights,
                 config.saa_count, rng_cost)
    report["cost_constant"] = f"{cost.c:.17g}"
    rows = timed("constraints", build_sampled_rows, ens, config.state_set, L)
    C = timed("constraints", assemble_constraint_set, rows, config.input_set, n, m, L, Ns,
              ens.redraws)
    report["rows_raw"] = str(C.raw_rows)
    report["rows_distinct"] = str(C.dedup_rows)
    report["rows_kept"] = str(C.reduced_rows)
    Z_L = timed("feasible-set", compute_ZL, C, n)

    bound = config.bound
    if bound is None:
        search = SearchConfig(safety=config.rho_safety)
        if config.bound_mode == "norm-box":
            rho = timed("bound", estimate_rho, data, config.noise, config.norm_kind, search,
                        rng_bound, L)
            bound = _stage("bound", build_vertex_set, rho, n, m, "full-box", config.norm_kind)
        elif config.bound_mode == "centered":
            _, lo, hi = timed("bound", estimate_entry_bounds, data, config.noise, search,
                              rng_bound, L)
            bound = bound_from_intervals(lo, hi)
        else:
            raise SynthesisError("bound", f"unknown bound mode {config.bound_mode!r}")
    report["bound_vertices"] = str(bound.num_vertices)

    E = config.noise.support
    coupled = decision_polytope(C) if config.invariance == "coupled" else None
    inv: InvarianceResult = timed("invariance", compute_Zinf, Z_L, bound, config.input_set, E,
                                  config.max_invariance_iter, coupled)
    report["invariance_iterations"] = str(inv.iterations)
    report["invariance_converged"] = str(inv.converged)
    report["invariance_trace"] = " ".join(map(str, inv.trace))
    C_R = timed("first-step", build_first_step_constraint, inv.Z_inf, bound, E, n, m, L)
    init = timed("initial-set", initial_condition_set, inv.Z_inf, E)
    if is_empty(init):
        raise SynthesisError("initial-set", "no true initial state is admissible")

    art = ControllerArtifact(n, m, L, data.N, cost, C, C_R, Z_L, inv.Z_inf, init, scenario,
                             config.noise.describe(), bound.describe(), config.seed, report=report)
    if is_empty(art.online_polytope()):
        raise SynthesisError("intersection", "sampled and first-step constraints do not intersect")
    for name, t in timings.items():
        report[f"time_{name}"] = f"{t:.3f}"
    return art


# ---------------------------------------------------------------------------
# online phase


@dataclass
class Decision:
    feasible: bool
    u0: Optional[np.ndarray]
    U: Optional[np.ndarray]
    objective: float
    status: Status
    certificate: Optional[np.ndarray] = None
    solve_time: float = 0.0
    iterations: int = 0


class OnlineController:
    """Per-session solver state (warm start) on top of an immutable artifact."""

    def __init__(self, artifact: ControllerArtifact, warm_start: bool = True):
        self.artifact = artifact
        self.warm_start = warm_start
        n, m, L = artifact.n, artifact.m, artifact.L
        D = artifact.online_polytope()
        self.G_x = D.G[:, :n]
        self.G_U = D.G[:, n:]
        self.g = D.g
        S, gamma = artifact.cost.S, artifact.cost.gamma
        k = n + L * m
        self.H = 2.0 * S[n:k, n:k]
        self.H = 0.5 * (self.H + self.H.T)
        self.F = 2.0 * S[n:k, :n]
        self.f0 = gamma[n:k]
        self.S_xx = S[:n, :n]
        self.gamma_x = gamma[:n]
        self._active: Optional[Sequence[int]] = None

    def reset(self):
        self._active = None

    def qp(self, x_meas) -> QuadraticProgram:
        x = np.asarray(x_meas, dtype=float).reshape(-1)
        return QuadraticProgram(self.H, self.F @ x + self.f0, self.G_U, self.g - self.G_x @ x)

    def step(self, x_meas) -> Decision:
        x = np.asarray(x_meas, dtype=float).reshape(-1)
        if x.size != self.artifact.n:
            raise ValueError(f"expected a state of dimension {self.artifact.n}")
        t0 = time.perf_counter()
        res = solve_qp(self.qp(x), warm_start=self._active if self.warm_start else None)
        dt = time.perf_counter() - t0
        m = self.artifact.m
        if res.status is not Status.OPTIMAL:
            self._active = None
            return Decision(False, None, None, float("nan"), res.status, res.dual, dt, res.iterations)
        if self.warm_start:
            self._active = res.active
        U = np.concatenate([res.point, np.zeros(m)])
        obj = float(res.objective + x @ self.S_xx @ x + self.gamma_x @ x)
        return Decision(True, res.point[:m].copy(), U, obj, res.status, None, dt, res.iterations)


def online_step(artifact: ControllerArtifact, x_meas) -> Decision:
    """Single cold-started solve of the online problem."""
    return OnlineController(artifact, warm_start=False).step(x_meas)


def feasible_check(artifact: ControllerArtifact, x_meas) -> bool:
    """Whether some input sequence satisfies all online constraints at ``x_meas``."""
    D = artifact.online_polytope()
    n = artifact.n
    x = np.asarray(x_meas, dtype=float).reshape(-1)
    res = find_feasible_point(D.G[:, n:], D.g - D.G[:, :n] @ x)
    return res.status is Status.OPTIMAL


# ---------------------------------------------------------------------------
# artifact file


def _matrix_text(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in M]
    return "\n".join(lines) + "\n"


def _parse_matrix(text: str) -> np.ndarray:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    r, c = (int(t) for t in lines[0].split())
    if r == 0:
        return np.zeros((0, c))
    return np.array([ln.split() for ln in lines[1:1 + r]], dtype=float).reshape(r, c)


def _kv_text(d: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in d.items())


def _parse_kv(text: str) -> dict:
    out = {}
    for ln in text.splitlines():
        if "=" in ln:
            k, v = ln.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def save_artifact(art: ControllerArtifact, path: Union[str, Path]) -> None:
    C = art.constraints
    sections = [
        ("dims", _kv_text({"n": art.n, "m": art.m, "L": art.L, "N": art.N})),
        ("meta", _kv_text({"version": art.version, "seed": art.seed})),
        ("scenario", _kv_text({"risk": _fmt(art.scenario.risk),
                               "confidence": _fmt(art.scenario.confidence),
                               "horizon": art.scenario.horizon,
                               "num_samples": _fmt(art.scenario.num_samples)})),
        ("noise", _kv_text({k: _fmt(v) for k, v in art.noise.items()})),
        ("bound", _kv_text({k: _fmt(v) for k, v in art.bound.items()
                            if k not in ("lower", "upper")})),
        ("bound.lower", _matrix_text(art.bound["lower"])),
        ("bound.upper", _matrix_text(art.bound["upper"])),
        ("cost", _kv_text({"c": _fmt(float(art.cost.c)), "samples": art.cost.samples,
                           "redraws": art.cost.redraws})),
        ("cost.S", _matrix_text(art.cost.S)),
        ("cost.gamma", _matrix_text(art.cost.gamma[None])),
        ("constraints", _kv_text({"num_samples": C.num_samples, "raw_rows": C.raw_rows,
                                  "dedup_rows": C.dedup_rows, "reduced_rows": C.reduced_rows,
                                  "wall_time": _fmt(float(C.wall_time)),
                                  "redraws": C.redraws})),
        ("constraints.polytope", to_text(C.polytope)),
        ("first_step", to_text(art.first_step)),
        ("Z_L", to_text(art.Z_L)),
        ("Z_inf", to_text(art.Z_inf)),
        ("init_set", to_text(art.init_set)),
        ("report", _kv_text(art.report)),
    ]
    with open(path, "w") as fh:
        fh.write(ARTIFACT_HEADER + "\n")
        for name, body in sections:
            fh.write(f"[{name}]\n{body}")


def _num(v: str):
    if v == "none":
        return None
    try:
        return int(v)
    except ValueError:
        return float(v)


def load_artifact(path: Union[str, Path]) -> ControllerArtifact:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != ARTIFACT_HEADER:
        raise ValueError(f"{path}: not a controller artifact (bad header)")
    sections: Dict[str, List[str]] = {}
    cur = None
    for ln in lines[1:]:
        if ln.startswith("[") and ln.endswith("]"):
            cur = ln[1:-1]
            sections[cur] = []
        elif cur is not None:
            sections[cur].append(ln)
    sec = {k: "\n".join(v) for k, v in sections.items()}
    dims = {k: int(v) for k, v in _parse_kv(sec["dims"]).items()}
    meta = _parse_kv(sec["meta"])
    sc = _parse_kv(sec["scenario"])
    scenario = ScenarioConfig(float(sc["risk"]), float(sc["confidence"]), int(sc["horizon"]),
                              num_samples=_num(sc["num_samples"]))
    noise = {k: _num(v) if " " not in v else [float(t) for t in v.split()]
             for k, v in _parse_kv(sec["noise"]).items()}
    bound = {k: _num(v) if k not in ("mode", "norm_kind") else v
             for k, v in _parse_kv(sec["bound"]).items()}
    bound["lower"] = _parse_matrix(sec["bound.lower"]).tolist()
    bound["upper"] = _parse_matrix(sec["bound.upper"]).tolist()
    ck = _parse_kv(sec["cost"])
    cost = CostForm(_parse_matrix(sec["cost.S"]), _parse_matrix(sec["cost.gamma"])[0],
                    float(ck["c"]), int(ck["samples"]), int(ck["redraws"]))
    cc = _parse_kv(sec["constraints"])
    C = ConstraintSet(from_text(sec["constraints.polytope"]), dims["n"], dims["m"], dims["L"],
                      int(cc["num_samples"]), int(cc["raw_rows"]), int(cc["dedup_rows"]),
                      int(cc["reduced_rows"]), float(cc["wall_time"]), int(cc["redraws"]))
    return ControllerArtifact(dims["n"], dims["m"], dims["L"], dims["N"], cost, C,
                              from_text(sec["first_step"]), from_text(sec["Z_L"]),
                              from_text(sec["Z_inf"]), from_text(sec["init_set"]), scenario,
                              noise, bound, int(meta["seed"]), meta["version"],
                              _parse_kv(sec.get("report", "")))
