import filecmp

import numpy as np
import pytest

from ddsmpc.harness import (CampaignConfig, CampaignResult, RunRecord, ScenarioResult,
                            boxplot_stats, check_gates, load_config, run_campaign,
                            sample_initial_state, simulate_closed_loop, summarize, total_cost,
                            write_results)
from ddsmpc.geometry import box, contains, inf_ball


def _record(J, bad_x=(), bad_u=(), infeasible=(), steps=4):
    in_X = np.ones(steps + 1, dtype=bool)
    in_U = np.ones(steps, dtype=bool)
    feas = np.ones(steps, dtype=bool)
    in_X[list(bad_x)] = False
    in_U[list(bad_u)] = False
    feas[list(infeasible)] = False
    z = np.zeros((steps + 1, 2))
    return RunRecord(np.zeros(2), 0, z, z, np.zeros((steps, 1)), feas, np.ones(steps), in_X,
                     in_U, J)


def test_total_cost_hand_computed():
    states = np.array([[0.0, 0.0], [1.0, 2.0], [0.5, 3.0]])
    inputs = np.array([[0.1], [-0.2]])
    Q = np.diag([1.0, 10.0])
    # e_1 = (1, -0.8), e_2 = (0.5, 0.2) with x_ref = (0, 2.8)
    expected = (1 + 10 * 0.64) + (0.25 + 10 * 0.04) + 0.01 + 0.04
    assert total_cost(states, inputs, Q, np.eye(1), [0.0, 2.8]) == pytest.approx(expected)


def test_boxplot_single_value():
    s = boxplot_stats([3.5])
    assert s["q1"] == s["median"] == s["q3"] == s["whisker_lo"] == s["whisker_hi"] == 3.5


def test_boxplot_whiskers_exclude_outliers():
    s = boxplot_stats([1, 2, 3, 4, 100])
    assert s["whisker_hi"] == 4 and s["max"] == 100 and s["median"] == 3


def test_violation_rates_arithmetic():
    sc = ScenarioResult(0.002, runs=[_record(1.0, bad_x=[1, 3]), _record(2.0, bad_x=[4]),
                                     _record(3.0, infeasible=[0], bad_u=[2])])
    res = CampaignResult(CampaignConfig(noise_bounds=[0.002], runs=3), [sc])
    row = summarize(res)[0]
    assert row["state_violation_rate"] == pytest.approx(3 / 12)
    assert row["input_violation_rate"] == pytest.approx(1 / 12)
    assert row["feasibility_rate"] == pytest.approx(11 / 12)
    assert row["median"] == 2.0
    np.testing.assert_allclose(sc.step_satisfaction(), [2 / 3, 1, 2 / 3, 2 / 3])
    gates = {name: ok for name, ok, _ in check_gates(res)}
    assert gates == {"noise 0.002: feasibility": False, "noise 0.002: state constraints": False,
                     "noise 0.002: input constraints": False}


def test_chance_gate_uses_binomial_floor():
    runs = [_record(1.0) for _ in range(100)]
    for r in runs[:25]:
        r.in_X[2] = False
    sc = ScenarioResult(0.1, runs=runs)
    res = CampaignResult(CampaignConfig(noise_bounds=[0.1], runs=100), [sc])
    gates = {name: ok for name, ok, _ in check_gates(res)}
    # 0.75 >= 0.8 - 3 * sqrt(0.16 / 100) = 0.68
    assert gates["noise 0.1: chance constraint"]


def test_config_validation():
    with pytest.raises(ValueError):
        CampaignConfig(runs=0)
    with pytest.raises(ValueError):
        CampaignConfig(preset="nope")
    with pytest.raises(ValueError):
        CampaignConfig(noise_bounds=[])


def test_preset_defaults():
    c = CampaignConfig()
    assert list(c.noise_bounds) == [0.0001, 0.001, 0.002, 0.01, 0.1]
    assert c.steps == 30 and c.runs == 200 and c.horizon == 6 and c.data_length == 30
    assert contains(c.state_set(), [2.8, -2.8]) and not contains(c.state_set(), [2.9, 0])
    assert contains(c.input_set(), [0.2]) and not contains(c.input_set(), [0.21])


def test_load_config(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[controller]\nhorizon = 5  # shorter\nQ = 2 0; 0 3\nnum_samples = 500\n"
                 "[campaign]\nnoise_bounds = 0.001, 0.01\nruns = 7\ndeterminism_audit = yes\n")
    c = load_config(p, {"runs": 9, "seed": None})
    assert c.horizon == 5 and c.num_samples == 500 and c.runs == 9
    assert c.Q == [[2.0, 0.0], [0.0, 3.0]]
    assert list(c.noise_bounds) == [0.001, 0.01] and c.determinism_audit
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")


def test_initial_state_resampling():
    rng = np.random.default_rng(0)
    x0, k = sample_initial_state(inf_ball(0.1, 2), 0.5, rng, 10_000)
    assert contains(inf_ball(0.1, 2), x0) and k >= 0
    x0, k = sample_initial_state(box([5, 5], [6, 6]), 0.5, rng, 20)
    assert x0 is None and k == 20


def test_closed_loop_zero_noise(zero_setup):
    cfg, plant, _, art = zero_setup
    rng = np.random.default_rng(1)
    run = simulate_closed_loop(plant, art, np.array([0.3, -0.2]), 30, rng, cfg.state_set(),
                               cfg.input_set(), cfg.weights())
    assert run.feasible.all() and run.in_X.all() and run.in_U.all()
    np.testing.assert_array_equal(run.states, run.measurements)
    assert run.J_tot == pytest.approx(total_cost(run.states, run.inputs, cfg.weights().Q,
                                                 cfg.weights().R, cfg.weights().x_ref))
    # the state approaches the reference
    assert abs(run.states[-1, 1] - 2.8) < abs(run.states[0, 1] - 2.8)


def _small_campaign(out, **kw):
    cfg = CampaignConfig(noise_bounds=[0.002], runs=4, steps=10, num_samples=60, saa_count=300,
                         invariance="decoupled", output_dir=str(out), determinism_audit=True,
                         **kw)
    return run_campaign(cfg)


def test_campaign_files_and_determinism(tmp_path):
    a = _small_campaign(tmp_path / "a")
    b = _small_campaign(tmp_path / "b")
    for name in ("summary.csv", "boxplot.dat", "runs.csv", "report.txt"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), name
    assert len(list((tmp_path / "a" / "transcripts").glob("*.csv"))) == 4
    sc = a.scenarios[0]
    assert len(sc.runs) == 4 and sc.infeasible_steps == 0
    assert all(contains(sc.artifact.init_set, r.x0) for r in sc.runs)
    gates = check_gates(a)
    assert all(ok for _, ok, _ in gates)


def test_campaign_records_synthesis_failure(tmp_path):
    # a noise level that leaves no admissible state is skipped with its reason
    cfg = CampaignConfig(noise_bounds=[0.9], runs=1, num_samples=20, saa_count=50,
                         invariance="decoupled")
    res = run_campaign(cfg)
    assert res.scenarios[0].skipped
    gates = check_gates(res)
    assert gates[0][1] is False and "synthesis" in gates[0][0]
    write_results(res, tmp_path)
    assert "skipped" in (tmp_path / "report.txt").read_text()
