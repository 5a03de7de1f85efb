"""Monte Carlo closed-loop campaigns, statistics and plot data."""

from __future__ import annotations

import configparser
import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .controller import (ControllerArtifact, ControllerConfig, OnlineController, SynthesisError,
                         synthesize)
from .cost import CostWeights
from .geometry import Polytope, contains, inf_ball
from .plant import PlantModel, collect_data, reference_plant
from .uncertainty import NoiseModel, sample_noise

logger = logging.getLogger(__name__)

PRESETS = ("paper-5.1",)


@dataclass
class CampaignConfig:
    """One campaign: a list of noise levels, each with fresh data and a fresh controller."""

    preset: str = "paper-5.1"
    noise_bounds: Sequence[float] = (0.0001, 0.001, 0.002, 0.01, 0.1)
    runs: int = 200
    steps: int = 30
    x0_radius: float = 0.5
    x_ref: Sequence[float] = (0.0, 2.8)
    state_bound: float = 2.8
    input_bound: float = 0.2
    data_length: int = 30
    horizon: int = 6
    risk: float = 0.8
    confidence: float = 0.999
    num_samples: Optional[int] = None
    saa_count: int = 10_000
    Q: Sequence[Sequence[float]] = ((1.0, 0.0), (0.0, 10.0))
    R: Sequence[Sequence[float]] = ((1.0,),)
    P: Sequence[Sequence[float]] = ((1.0, 0.0), (0.0, 10.0))
    std_factor: float = 1.0 / 3.0
    rho_safety: float = 1.1
    bound_mode: str = "centered"
    invariance: str = "coupled"
    seed: int = 0
    output_dir: Optional[str] = None
    workers: int = 1
    warm_start: bool = True
    determinism_audit: bool = False
    max_resample: int = 10_000

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; available: {', '.join(PRESETS)}")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.noise_bounds:
            raise ValueError("at least one noise bound is required")

    def plant(self, noise_bound: float) -> PlantModel:
        return reference_plant(noise_bound, self.std_factor)

    def state_set(self) -> Polytope:
        return inf_ball(self.state_bound, 2)

    def input_set(self) -> Polytope:
        return inf_ball(self.input_bound, 1)

    def weights(self) -> CostWeights:
        return CostWeights(np.array(self.Q, dtype=float), np.array(self.R, dtype=float),
                           np.array(self.P, dtype=float), np.array(self.x_ref, dtype=float))

    def controller_config(self, noise: NoiseModel, seed: int) -> ControllerConfig:
        return ControllerConfig(self.state_set(), self.input_set(), noise, self.weights(),
                                horizon=self.horizon, risk=self.risk, confidence=self.confidence,
                                num_samples=self.num_samples, saa_count=self.saa_count,
                                bound_mode=self.bound_mode, rho_safety=self.rho_safety,
                                invariance=self.invariance, seed=seed)


@dataclass
class RunRecord:
    x0: np.ndarray
    resamples: int
    states: np.ndarray        # (T+1, n)
    measurements: np.ndarray  # (T+1, n)
    inputs: np.ndarray        # (T, m)
    feasible: np.ndarray      # (T,)
    solve_ms: np.ndarray      # (T,)
    in_X: np.ndarray          # (T+1,)
    in_U: np.ndarray          # (T,)
    J_tot: float


@dataclass
class ScenarioResult:
    noise_bound: float
    runs: List[RunRecord] = field(default_factory=list)
    skipped: Optional[str] = None
    report: Dict[str, str] = field(default_factory=dict)
    synthesis_time: float = 0.0
    artifact: Optional[ControllerArtifact] = field(default=None, repr=False)

    @property
    def state_violations(self) -> int:
        return int(sum((~r.in_X[1:]).sum() for r in self.runs))

    @property
    def input_violations(self) -> int:
        return int(sum((~r.in_U).sum() for r in self.runs))

    @property
    def infeasible_steps(self) -> int:
        return int(sum((~r.feasible).sum() for r in self.runs))

    def step_satisfaction(self) -> np.ndarray:
        """Fraction of runs with ``x_k`` in the state set, for ``k = 1..T``."""
        if not self.runs:
            return np.zeros(0)
        return np.mean([r.in_X[1:] for r in self.runs], axis=0)


@dataclass
class CampaignResult:
    config: CampaignConfig
    scenarios: List[ScenarioResult]


def total_cost(states, inputs, Q, R, x_ref) -> float:
    """``sum_k (x_{k+1}-x_ref)'Q(x_{k+1}-x_ref) + u_k'R u_k`` over the recorded inputs."""
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float).reshape(len(states) - 1, -1)
    e = states[1:] - np.asarray(x_ref, dtype=float)
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    return float(np.einsum("ki,ij,kj->", e, Q, e) + np.einsum("ki,ij,kj->", inputs, R, inputs))


def simulate_closed_loop(plant: PlantModel, artifact: ControllerArtifact, x0, steps: int,
                         rng: np.random.Generator, state_set: Polytope, input_set: Polytope,
                         weights: CostWeights, warm_start: bool = True,
                         record_time: bool = True, resamples: int = 0) -> RunRecord:
    ctrl = OnlineController(artifact, warm_start=warm_start)
    n, m = plant.n, plant.m
    xs = np.zeros((steps + 1, n))
    xh = np.zeros((steps + 1, n))
    us = np.zeros((steps, m))
    feas = np.ones(steps, dtype=bool)
    ms = np.zeros(steps)
    xs[0] = x0
    xh[0] = xs[0] + sample_noise(plant.noise, rng)
    for k in range(steps):
        dec = ctrl.step(xh[k])
        if dec.feasible:
            us[k] = dec.u0
        else:
            feas[k] = False
            logger.warning("infeasible online problem at step %d", k)
        if record_time:
            ms[k] = 1e3 * dec.solve_time
        xs[k + 1] = plant.A @ xs[k] + plant.B @ us[k]
        xh[k + 1] = xs[k + 1] + sample_noise(plant.noise, rng)
    in_X = contains(state_set, xs, tol=1e-9)
    in_U = contains(input_set, us, tol=1e-9)
    J = total_cost(xs, us, weights.Q, weights.R, weights.x_ref)
    return RunRecord(np.array(x0, dtype=float), resamples, xs, xh, us, feas, ms, in_X, in_U, J)


def sample_initial_state(init_set: Polytope, radius: float, rng: np.random.Generator,
                         max_resample: int) -> Tuple[Optional[np.ndarray], int]:
    """Uniform draw from ``|x0|_inf <= radius``, redrawn until it lies in ``init_set``."""
    n = init_set.dim
    for i in range(max_resample):
        x0 = rng.uniform(-radius, radius, size=n)
        if contains(init_set, x0, tol=0.0):
            return x0, i
    return None, max_resample


def _run_one(args):
    (cfg, artifact, eb, seed_seq) = args
    rng = np.random.default_rng(seed_seq)
    x0, resamples = sample_initial_state(artifact.init_set, cfg.x0_radius, rng, cfg.max_resample)
    if x0 is None:
        raise RuntimeError(f"no admissible initial state after {cfg.max_resample} draws")
    return simulate_closed_loop(cfg.plant(eb), artifact, x0, cfg.steps, rng, cfg.state_set(),
                                cfg.input_set(), cfg.weights(),
                                warm_start=cfg.warm_start and not cfg.determinism_audit,
                                record_time=not cfg.determinism_audit, resamples=resamples)


def run_scenario(cfg: CampaignConfig, eb: float, seed_seq: np.random.SeedSequence,
                 ) -> Tuple[ScenarioResult, Optional[ControllerArtifact]]:
    s_data, s_synth, s_runs = seed_seq.spawn(3)
    plant = cfg.plant(eb)
    result = ScenarioResult(eb)
    t0 = time.perf_counter()
    try:
        data = collect_data(plant, cfg.data_length, cfg.horizon, np.random.default_rng(s_data),
                            input_set=cfg.input_set())
        synth_seed = int(s_synth.generate_state(1)[0])
        artifact = synthesize(data, cfg.controller_config(plant.noise, synth_seed))
    except (SynthesisError, RuntimeError, ValueError) as exc:
        result.skipped = str(exc)
        logger.error("noise bound %g skipped: %s", eb, exc)
        return result, None
    result.synthesis_time = time.perf_counter() - t0
    result.report = dict(artifact.report)
    result.artifact = artifact
    jobs = [(cfg, artifact, eb, s) for s in s_runs.spawn(cfg.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            result.runs = list(pool.map(_run_one, jobs))
    else:
        result.runs = [_run_one(j) for j in jobs]
    return result, artifact


def run_campaign(cfg: CampaignConfig) -> CampaignResult:
    """Synthesize once per noise level and simulate ``cfg.runs`` closed-loop runs."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.noise_bounds))
    scenarios = []
    for eb, ss in zip(cfg.noise_bounds, seeds):
        logger.info("noise bound %g", eb)
        res, _ = run_scenario(cfg, float(eb), ss)
        scenarios.append(res)
    result = CampaignResult(cfg, scenarios)
    if cfg.output_dir:
        write_results(result, cfg.output_dir)
    return result


# ---------------------------------------------------------------------------
# statistics


def boxplot_stats(values) -> Dict[str, float]:
    """Quartiles and 1.5 IQR whiskers (clipped to the data)."""
    v = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return {"min": float(v[0]), "whisker_lo": float(lo), "q1": float(q1), "median": float(med),
            "q3": float(q3), "whisker_hi": float(hi), "max": float(v[-1])}


def summarize(result: CampaignResult) -> List[Dict[str, float]]:
    rows = []
    for sc in result.scenarios:
        row: Dict[str, float] = {"noise_bound": sc.noise_bound, "runs": len(sc.runs),
                                 "skipped": sc.skipped or ""}
        if sc.runs:
            steps = len(sc.runs[0].inputs)
            total = len(sc.runs) * steps
            row.update(boxplot_stats([r.J_tot for r in sc.runs]))
            times = np.concatenate([r.solve_ms for r in sc.runs])
            row.update({
                "steps": steps,
                "state_violation_rate": sc.state_violations / total,
                "input_violation_rate": sc.input_violations / total,
                "feasibility_rate": 1.0 - sc.infeasible_steps / total,
                "min_step_satisfaction": float(sc.step_satisfaction().min()),
                "solve_ms_mean": float(times.mean()),
                "solve_ms_p50": float(np.percentile(times, 50)),
                "solve_ms_p95": float(np.percentile(times, 95)),
                "resamples_mean": float(np.mean([r.resamples for r in sc.runs])),
            })
        rows.append(row)
    return rows


def check_gates(result: CampaignResult, hard_limit: float = 0.002) -> List[Tuple[str, bool, str]]:
    """Pass/fail of the campaign invariants, one entry per scenario and gate."""
    p = result.config.risk
    gates = []
    for sc in result.scenarios:
        tag = f"noise {sc.noise_bound:g}"
        if sc.skipped:
            gates.append((f"{tag}: synthesis", False, sc.skipped))
            continue
        gates.append((f"{tag}: feasibility", sc.infeasible_steps == 0,
                      f"{sc.infeasible_steps} infeasible steps"))
        if sc.noise_bound <= hard_limit:
            gates.append((f"{tag}: state constraints", sc.state_violations == 0,
                          f"{sc.state_violations} violations"))
            gates.append((f"{tag}: input constraints", sc.input_violations == 0,
                          f"{sc.input_violations} violations"))
        else:
            runs = len(sc.runs)
            floor = p - 3.0 * math.sqrt(p * (1.0 - p) / runs)
            worst = float(sc.step_satisfaction().min())
            gates.append((f"{tag}: chance constraint", worst >= floor,
                          f"worst step {worst:.4f} vs floor {floor:.4f}"))
            gates.append((f"{tag}: input constraints", sc.input_violations == 0,
                          f"{sc.input_violations} violations"))
    return gates


# ---------------------------------------------------------------------------
# files


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_transcript(run: RunRecord, path) -> None:
    n = run.states.shape[1]
    m = run.inputs.shape[1]
    header = (["k"] + [f"x_{i + 1}" for i in range(n)] + [f"xhat_{i + 1}" for i in range(n)]
              + [f"u_{i + 1}" for i in range(m)] + ["feasible", "solve_time_ms", "in_X"])
    T = run.inputs.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(T + 1):
            u = run.inputs[k] if k < T else np.full(m, np.nan)
            feas = int(run.feasible[k]) if k < T else ""
            ms = f"{run.solve_ms[k]:.4f}" if k < T else ""
            w.writerow([k] + [f"{v:.17g}" for v in run.states[k]]
                       + [f"{v:.17g}" for v in run.measurements[k]]
                       + ([f"{v:.17g}" for v in u] if k < T else [""] * m)
                       + [feas, ms, int(run.in_X[k])])


def write_results(result: CampaignResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(result)
    keys = ["noise_bound", "runs", "steps", "min", "whisker_lo", "q1", "median", "q3",
            "whisker_hi", "max", "state_violation_rate", "input_violation_rate",
            "feasibility_rate", "min_step_satisfaction", "solve_ms_mean", "solve_ms_p50",
            "solve_ms_p95", "resamples_mean", "skipped"]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in summary:
            w.writerow([_fmt(row.get(k, "")) for k in keys])
    with open(out / "boxplot.dat", "w") as fh:
        fh.write("# index noise_bound whisker_lo q1 median q3 whisker_hi\n")
        for i, row in enumerate(summary):
            if "median" in row:
                fh.write(f"{i} {row['noise_bound']:.6g} {row['whisker_lo']:.10g} {row['q1']:.10g} "
                         f"{row['median']:.10g} {row['q3']:.10g} {row['whisker_hi']:.10g}\n")
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise_bound", "run", "x0_1", "x0_2", "resamples", "J_tot",
                    "state_violations", "input_violations", "infeasible_steps"])
        for sc in result.scenarios:
            for i, r in enumerate(sc.runs):
                w.writerow([_fmt(sc.noise_bound), i] + [f"{v:.17g}" for v in r.x0]
                           + [r.resamples, f"{r.J_tot:.17g}", int((~r.in_X[1:]).sum()),
                              int((~r.in_U).sum()), int((~r.feasible).sum())])
    with open(out / "report.txt", "w") as fh:
        for sc in result.scenarios:
            fh.write(f"[noise {sc.noise_bound:g}]\n")
            if sc.skipped:
                fh.write(f"skipped = {sc.skipped}\n")
            for k, v in sc.report.items():
                if result.config.determinism_audit and k.startswith("time_"):
                    continue
                fh.write(f"{k} = {v}\n")
        for name, ok, detail in check_gates(result):
            fh.write(f"gate {'PASS' if ok else 'FAIL'} {name}: {detail}\n")
    tdir = out / "transcripts"
    tdir.mkdir(exist_ok=True)
    for si, sc in enumerate(result.scenarios):
        for i, r in enumerate(sc.runs):
            write_transcript(r, tdir / f"noise{si}_run{i:04d}.csv")
    return out


# ---------------------------------------------------------------------------
# configuration file


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _matrix(text: str) -> List[List[float]]:
    return [_floats(row) for row in text.split(";") if row.strip()]


def load_config(path, overrides: Optional[dict] = None) -> CampaignConfig:
    """INI file with ``[plant]``, ``[controller]`` and ``[campaign]`` sections (all optional)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if path is not None:
        if not cp.read(path):
            raise FileNotFoundError(path)
    kw: dict = {}
    sec = cp["plant"] if cp.has_section("plant") else {}
    if "preset" in sec:
        kw["preset"] = sec["preset"]
    for key in ("state_bound", "input_bound", "std_factor"):
        if key in sec:
            kw[key] = float(sec[key])
    if "data_length" in sec:
        kw["data_length"] = int(sec["data_length"])
    sec = cp["controller"] if cp.has_section("controller") else {}
    for key in ("horizon", "saa_count"):
        if key in sec:
            kw[key] = int(sec[key])
    for key in ("risk", "confidence", "rho_safety"):
        if key in sec:
            kw[key] = float(sec[key])
    if sec.get("num_samples", "").strip():
        kw["num_samples"] = int(sec["num_samples"])
    for key in ("Q", "R", "P"):
        if key in sec:
            kw[key] = _matrix(sec[key])
    if "x_ref" in sec:
        kw["x_ref"] = _floats(sec["x_ref"])
    for key in ("bound_mode", "invariance"):
        if key in sec:
            kw[key] = sec[key].strip()
    sec = cp["campaign"] if cp.has_section("campaign") else {}
    if "noise_bounds" in sec:
        kw["noise_bounds"] = _floats(sec["noise_bounds"])
    for key in ("runs", "steps", "seed", "workers", "max_resample"):
        if key in sec:
            kw[key] = int(sec[key])
    if "x0_radius" in sec:
        kw["x0_radius"] = float(sec["x0_radius"])
    if "output" in sec:
        kw["output_dir"] = sec["output"]
    for key in ("warm_start", "determinism_audit"):
        if key in sec:
            kw[key] = sec[key].strip().lower() in ("1", "true", "yes", "on")
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return CampaignConfig(**kw)
