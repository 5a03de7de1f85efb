import numpy as np
import pytest

from ddsmpc.geometry import (Polytope, box, contains, inf_ball, is_subset,
                             pontryagin_diff, same_set, sample_uniform)
from ddsmpc.invariance import (NoInvariantSetError, _robust_rows, build_first_step_constraint,
                               compute_ZL, compute_Zinf, initial_condition_set, invariant_step)
from ddsmpc.plant import REFERENCE_A, REFERENCE_B
from ddsmpc.uncertainty import bound_from_intervals

from oracles import (box_vertices, boundary_biased_samples, lp_feasible, robust_input_exists,
                     successor_in_set)

AB = np.hstack([REFERENCE_A, REFERENCE_B])
U = inf_ball(0.2, 1)
X = inf_ball(2.8, 2)


def interval_bound(delta):
    return bound_from_intervals(AB - delta, AB + delta)


def test_single_vertex_zero_noise_is_preset():
    bound = interval_bound(0.0)
    E = inf_ball(0.0, 2)
    Z = inf_ball(1.0, 2)
    P = invariant_step(Z, inf_ball(5.0, 2), bound, U, E)
    rng = np.random.default_rng(0)
    for x in rng.uniform(-1.2, 1.2, (300, 2)):
        # lifted-projection oracle: exists u in U with Ax + Bu in Z and x in Z
        A = np.vstack([Z.G @ REFERENCE_B, U.G])
        b = np.concatenate([Z.g - Z.G @ (REFERENCE_A @ x), U.g])
        expected = lp_feasible(A, b) and contains(Z, x, tol=0)
        got = contains(P, x, tol=0)
        if got != expected:
            # only points within rounding of the boundary may disagree
            assert np.max(P.G @ x - P.g) > -1e-8


def test_robust_rows_exhaustive_successor():
    bound = interval_bound(0.002)
    E = inf_ball(0.01, 2)
    Z = inf_ball(2.0, 2)
    Gr, gr = _robust_rows(Z.G, Z.g, bound, E)
    R = Polytope(Gr, gr)
    ev = box_vertices(-0.01 * np.ones(2), 0.01 * np.ones(2))
    rng = np.random.default_rng(1)
    pts = rng.uniform([-2, -2, -0.2], [2, 2, 0.2], (3000, 3))
    pts = pts[contains(R, pts, tol=0)][:100]
    assert len(pts) == 100
    for p in pts:
        assert successor_in_set(p[:2], p[2:], Z, bound.vertices, ev)


def test_robust_rows_monotone_in_noise_set():
    bound = interval_bound(0.002)
    Z = inf_ball(2.0, 2)
    _, g_small = _robust_rows(Z.G, Z.g, bound, inf_ball(0.001, 2))
    _, g_big = _robust_rows(Z.G, Z.g, bound, inf_ball(0.01, 2))
    assert np.all(g_big <= g_small + 1e-15)


def test_zero_noise_exact_model_fixed_point():
    res = compute_Zinf(X, interval_bound(0.0), U, inf_ball(0.0, 2))
    assert res.converged
    Zi = res.Z_inf
    ev = np.zeros((1, 2))
    rng = np.random.default_rng(2)
    for x in boundary_biased_samples(Zi, 60, rng):
        assert robust_input_exists(x, Zi, [(REFERENCE_A, REFERENCE_B)], ev, U)


def test_robust_fixed_point_definitional_oracle():
    bound = interval_bound(0.0005)
    E = inf_ball(0.002, 2)
    res = compute_Zinf(X, bound, U, E)
    assert res.converged
    Zi = res.Z_inf
    # monotone recursion and fixed point
    assert is_subset(Zi, X)
    assert same_set(invariant_step(Zi, X, bound, U, E), Zi, tol=1e-6)
    ev = box_vertices(-0.002 * np.ones(2), 0.002 * np.ones(2))
    rng = np.random.default_rng(3)
    for x in boundary_biased_samples(Zi, 80, rng):
        assert robust_input_exists(x, Zi, bound.vertices, ev, U)


def test_recursion_is_monotone():
    bound = interval_bound(0.0005)
    E = inf_ball(0.002, 2)
    Z = X
    rng = np.random.default_rng(4)
    for _ in range(4):
        Zn = invariant_step(Z, X, bound, U, E)
        pts = sample_uniform(Zn, 200, rng)
        assert contains(Z, pts, tol=1e-9).all()
        Z = Zn


def test_empty_invariant_set_raises():
    with pytest.raises(NoInvariantSetError):
        compute_Zinf(X, interval_bound(0.5), U, inf_ball(0.2, 2))


def test_max_iter_validation():
    with pytest.raises(ValueError):
        compute_Zinf(X, interval_bound(0.0), U, inf_ball(0.0, 2), max_iter=0)


def test_first_step_constraint_and_initial_set():
    bound = interval_bound(0.0005)
    E = inf_ball(0.002, 2)
    Zi = compute_Zinf(X, bound, U, E).Z_inf
    C_R = build_first_step_constraint(Zi, bound, E, 2, 1, 6)
    assert C_R.dim == 9
    np.testing.assert_array_equal(C_R.G[:, 3:], 0.0)
    ev = box_vertices(-0.002 * np.ones(2), 0.002 * np.ones(2))
    rng = np.random.default_rng(5)
    lo = np.r_[-3.0, -3.0, -0.2]
    hi = -lo
    pts = rng.uniform(lo, hi, (20000, 3))
    pad = np.hstack([pts, np.zeros((len(pts), 6))])
    pts = pts[contains(C_R, pad, tol=0)][:100]
    assert len(pts) > 20
    for p in pts:
        assert successor_in_set(p[:2], p[2:], Zi, bound.vertices, ev)
    init = initial_condition_set(Zi, E)
    assert same_set(init, pontryagin_diff(Zi, E))
    for x in sample_uniform(init, 50, rng):
        for e in ev:
            assert contains(Zi, x + e, tol=1e-9)


def test_compute_ZL_plain_polytope_projection():
    P = box([-1, -2, -0.5], [1, 2, 0.5])
    assert same_set(compute_ZL(P, 2), box([-1, -2], [1, 2]))
