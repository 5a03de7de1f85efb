"""Command-line interface: data collection, synthesis, online steps and campaigns."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .controller import (OnlineController, SynthesisError, feasible_check, load_artifact,
                         save_artifact, synthesize)
from .datarep import TrajectoryData
from .geometry import contains
from .harness import (check_gates, load_config, run_campaign, sample_initial_state,
                      simulate_closed_loop, summarize, write_results, write_transcript)
from .plant import collect_data
from .scenario import sample_complexity
from .uncertainty import (SearchConfig, estimate_entry_bounds, estimate_rho)


def _vector(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.replace(",", " ").split()])


def _config(args):
    overrides = {
        "std_factor": getattr(args, "noise_std_factor", None),
        "rho_safety": getattr(args, "rho_safety", None),
        "num_samples": getattr(args, "num_samples", None),
        "runs": getattr(args, "runs", None),
        "seed": getattr(args, "seed", None),
        "output_dir": getattr(args, "out", None) if args.command == "campaign" else None,
    }
    if getattr(args, "noise_bound", None) is not None and args.command == "campaign":
        overrides["noise_bounds"] = args.noise_bound
    return load_config(getattr(args, "config", None), overrides)


def _noise_bound(args, default=0.002) -> float:
    nb = getattr(args, "noise_bound", None)
    if nb is None:
        return default
    return float(nb[0]) if isinstance(nb, list) else float(nb)


def cmd_collect(args) -> int:
    cfg = _config(args)
    plant = cfg.plant(_noise_bound(args))
    data = collect_data(plant, cfg.data_length, cfg.horizon, np.random.default_rng(cfg.seed),
                        input_set=cfg.input_set())
    data.to_csv(args.out)
    print(f"wrote {data.N} samples to {args.out}")
    return 0


def cmd_synthesize(args) -> int:
    cfg = _config(args)
    data = TrajectoryData.from_csv(args.data)
    plant = cfg.plant(_noise_bound(args))
    try:
        art = synthesize(data, cfg.controller_config(plant.noise, cfg.seed))
    except SynthesisError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return 2
    save_artifact(art, args.out)
    C = art.constraints
    print(f"samples {C.num_samples}; rows raw {C.raw_rows}, distinct {C.dedup_rows}, "
          f"kept {C.reduced_rows}; invariance iterations {art.report['invariance_iterations']}")
    print(f"wrote {args.out}")
    return 0


def cmd_step(args) -> int:
    art = load_artifact(args.artifact)
    x = _vector(args.state)
    dec = OnlineController(art, warm_start=False).step(x)
    if not dec.feasible:
        print(f"infeasible ({dec.status.value})")
        return 1
    print("u0 = " + " ".join(f"{v:.10g}" for v in dec.u0))
    print("U = " + " ".join(f"{v:.10g}" for v in dec.U))
    print(f"objective = {dec.objective:.10g}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    art = load_artifact(args.artifact)
    eb = _noise_bound(args)
    plant = cfg.plant(eb)
    rng = np.random.default_rng(cfg.seed)
    if args.x0:
        x0, resamples = _vector(args.x0), 0
    else:
        x0, resamples = sample_initial_state(art.init_set, cfg.x0_radius, rng, cfg.max_resample)
        if x0 is None:
            print("no admissible initial state found", file=sys.stderr)
            return 2
    run = simulate_closed_loop(plant, art, x0, args.steps or cfg.steps, rng, cfg.state_set(),
                               cfg.input_set(), cfg.weights(), resamples=resamples)
    out = args.out or "transcript.csv"
    write_transcript(run, out)
    print(f"J_tot = {run.J_tot:.10g}; infeasible steps {int((~run.feasible).sum())}; "
          f"state violations {int((~run.in_X[1:]).sum())}; wrote {out}")
    return 0


def cmd_campaign(args) -> int:
    cfg = _config(args)
    result = run_campaign(cfg)
    if not cfg.output_dir:
        write_results(result, "campaign")
    for row in summarize(result):
        if "median" in row:
            print(f"noise {row['noise_bound']:g}: median J_tot {row['median']:.4g}, "
                  f"state violation rate {row['state_violation_rate']:.4g}, "
                  f"feasibility {row['feasibility_rate']:.4g}")
        else:
            print(f"noise {row['noise_bound']:g}: skipped ({row['skipped']})")
    gates = check_gates(result)
    for name, ok, detail in gates:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    if args.check:
        return 0 if all(ok for _, ok, _ in gates) else 1
    return 0


def cmd_report(args) -> int:
    path = Path(args.results) / "summary.csv"
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = ["noise_bound", "runs", "q1", "median", "q3", "state_violation_rate",
            "feasibility_rate", "solve_ms_p50"]
    print("  ".join(f"{c:>20s}" for c in cols))
    for r in rows:
        print("  ".join(f"{r.get(c, ''):>20s}" for c in cols))
    rep = Path(args.results) / "report.txt"
    if rep.exists():
        print(rep.read_text())
    return 0


def cmd_estimate_bounds(args) -> int:
    cfg = _config(args)
    data = TrajectoryData.from_csv(args.data)
    noise = cfg.plant(_noise_bound(args)).noise
    search = SearchConfig(safety=cfg.rho_safety)
    rng = np.random.default_rng(cfg.seed)
    rho = estimate_rho(data, noise, "inf", search, rng, cfg.horizon)
    print(f"rho_hat = {rho:.10g} (safety factor {cfg.rho_safety:g} included)")
    center, lo, hi = estimate_entry_bounds(data, noise, search, rng, cfg.horizon)
    np.set_printoptions(precision=6, suppress=True)
    print("identified [A B] =\n", center)
    print("entrywise lower =\n", lo)
    print("entrywise upper =\n", hi)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddsmpc", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, noise_many=False):
        sp.add_argument("--config", help="INI configuration file")
        if noise_many:
            sp.add_argument("--noise-bound", type=float, nargs="+")
        else:
            sp.add_argument("--noise-bound", type=float)
        sp.add_argument("--noise-std-factor", type=float)
        sp.add_argument("--rho-safety", type=float)
        sp.add_argument("--num-samples", type=int)
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("collect", help="record an open-loop experiment")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("synthesize", help="build a controller artifact from data")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("step", help="solve the online problem for one measurement")
    sp.add_argument("--artifact", required=True)
    sp.add_argument("--state", required=True, help='measured state, e.g. "0.1,-0.2"')
    sp.set_defaults(func=cmd_step)

    sp = sub.add_parser("simulate", help="closed-loop run on the reference plant")
    common(sp)
    sp.add_argument("--artifact", required=True)
    sp.add_argument("--x0")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("campaign", help="Monte Carlo campaign over noise levels")
    common(sp, noise_many=True)
    sp.add_argument("--runs", type=int)
    sp.add_argument("--out")
    sp.add_argument("--check", action="store_true", help="exit 1 unless every gate passes")
    sp.set_defaults(func=cmd_campaign)

    sp = sub.add_parser("report", help="print a campaign summary")
    sp.add_argument("results")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("estimate-bounds", help="bounds on the system matrices from data")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_estimate_bounds)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
