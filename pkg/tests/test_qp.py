"""Interior-point QP solver tests: analytic goldens, the active-set
enumeration oracle, KKT diagnostics, status handling, and serialization.
"""

import numpy as np
import pytest

from topkqp.qp import (
    QPNumericError,
    QPProblem,
    QPSolution,
    SolverConfig,
    SolverStatus,
    brute_force_solve,
    dump_problem,
    kkt_residuals,
    load_problem,
    solve,
    solve_batch,
)


def random_feasible_problem(rng, d, m, ridge=1e-1, with_eq=False):
    f = rng.standard_normal((d, d))
    q = f.T @ f + ridge * np.eye(d)
    p = rng.standard_normal(d)
    g = rng.standard_normal((m, d))
    z0 = rng.standard_normal(d)
    h = g @ z0 + np.abs(rng.standard_normal(m)) + 0.1
    weq = beq = None
    if with_eq and d > 1:
        weq = rng.standard_normal((1, d))
        beq = weq @ z0
    return QPProblem(Q=q, p=p, G=g, h=h, W=weq, b=beq)


# ---------------------------------------------------------------------------
# analytic goldens


def test_inactive_constraint_returns_unconstrained_minimizer():
    prob = QPProblem(Q=2.0 * np.eye(2), p=np.zeros(2), G=np.array([[1.0, 0.0]]),
                     h=np.array([5.0]))
    sol = solve(prob)
    assert sol.status == SolverStatus.OPTIMAL
    assert np.array_equal(sol.z, np.zeros(2))
    assert np.array_equal(sol.ineq_mult, np.zeros(1))


def test_halfspace_projection():
    prob = QPProblem(Q=2.0 * np.eye(2), p=np.zeros(2), G=np.array([[1.0, 0.0]]),
                     h=np.array([-1.0]))
    sol = solve(prob)
    assert sol.status == SolverStatus.OPTIMAL
    assert np.abs(sol.z - np.array([-1.0, 0.0])).max() < 1e-8
    assert abs(sol.ineq_mult[0] - 2.0) < 1e-6


def test_equality_projection_matches_closed_form():
    rng = np.random.default_rng(1)
    c = rng.standard_normal(4)
    a = rng.standard_normal(4)
    b = 0.7
    prob = QPProblem(Q=2.0 * np.eye(4), p=-2.0 * c, G=np.zeros((0, 4)), h=np.zeros(0),
                     W=a[None, :], b=np.array([b]))
    sol = solve(prob)
    expected = c + (b - a @ c) / (a @ a) * a
    assert sol.status == SolverStatus.OPTIMAL
    assert np.abs(sol.z - expected).max() < 1e-9


def test_feasible_center_projection_is_exact():
    # whenever the unconstrained minimizer already satisfies G z <= h the
    # solver must hand it back unchanged
    rng = np.random.default_rng(2)
    for _ in range(20):
        d = int(rng.integers(1, 9))
        m = int(rng.integers(1, 7))
        center = rng.standard_normal(d)
        g = rng.standard_normal((m, d))
        h = g @ center + np.abs(rng.standard_normal(m)) + 0.1
        sol = solve(QPProblem(Q=2.0 * np.eye(d), p=-2.0 * center, G=g, h=h))
        assert sol.status == SolverStatus.OPTIMAL
        assert np.abs(sol.z - center).max() <= 1e-9
        assert sol.iterations == 0


# ---------------------------------------------------------------------------
# KKT residual diagnostics


def halfspace_solution(z, lam):
    return QPSolution(z=np.asarray(z, dtype=float), ineq_mult=np.asarray(lam, dtype=float),
                      eq_mult=np.zeros(0), slacks=np.zeros(1),
                      status=SolverStatus.OPTIMAL, iterations=0, kkt_residual=0.0)


def test_kkt_residuals_hand_checked_halfspace():
    prob = QPProblem(Q=2.0 * np.eye(2), p=np.zeros(2), G=np.array([[1.0, 0.0]]),
                     h=np.array([-1.0]))
    resid = kkt_residuals(prob, halfspace_solution([-1.0, 0.0], [2.0]))
    assert resid == (0.0, 0.0, 0.0, 0.0)


def test_kkt_residuals_zero_at_unconstrained_optimum():
    prob = QPProblem(Q=2.0 * np.eye(2), p=np.array([-2.0, 4.0]),
                     G=np.zeros((0, 2)), h=np.zeros(0))
    sol = QPSolution(z=np.array([1.0, -2.0]), ineq_mult=np.zeros(0), eq_mult=np.zeros(0),
                     slacks=np.zeros(0), status=SolverStatus.OPTIMAL, iterations=0,
                     kkt_residual=0.0)
    assert kkt_residuals(prob, sol) == (0.0, 0.0, 0.0, 0.0)


def test_perturbing_z_increases_stationarity_residual():
    prob = QPProblem(Q=2.0 * np.eye(2), p=np.zeros(2), G=np.array([[1.0, 0.0]]),
                     h=np.array([-1.0]))
    base = kkt_residuals(prob, halfspace_solution([-1.0, 0.0], [2.0]))[0]
    bumped = kkt_residuals(prob, halfspace_solution([-0.9, 0.0], [2.0]))[0]
    assert bumped > base


# ---------------------------------------------------------------------------
# oracle agreement


def test_small_random_problems_match_enumeration_oracle():
    rng = np.random.default_rng(3)
    for i in range(50):
        prob = random_feasible_problem(rng, d=4, m=3, with_eq=(i % 5 == 0))
        sol = solve(prob)
        assert sol.status == SolverStatus.OPTIMAL
        ref = brute_force_solve(prob)
        assert np.abs(sol.z - ref).max() < 1e-6
        assert abs(prob.objective(sol.z) - prob.objective(ref)) < 1e-6


def test_duality_gap_shrinks_and_bottoms_out_at_the_last_iterate():
    # individual predictor-corrector steps may raise the raw gap, but an
    # optimal solve always ends at the smallest recorded gap, orders of
    # magnitude below the starting one
    rng = np.random.default_rng(4)
    for _ in range(200):
        d = int(rng.integers(1, 20))
        m = int(rng.integers(1, 12))
        prob = random_feasible_problem(rng, d, m)
        sol = solve(prob)
        if sol.status != SolverStatus.OPTIMAL or len(sol.gap_history) < 2:
            continue
        gaps = np.asarray(sol.gap_history)
        assert gaps[-1] == gaps.min()
        assert gaps[-1] <= 1e-8 * gaps[0]


# ---------------------------------------------------------------------------
# statuses and errors


def test_infeasible_problem_reports_infeasible_status():
    # z <= -1 and z >= 1 cannot both hold
    prob = QPProblem(Q=2.0 * np.eye(1), p=np.zeros(1), G=np.array([[1.0], [-1.0]]),
                     h=np.array([-1.0, -1.0]))
    sol = solve(prob)
    assert sol.status == SolverStatus.INFEASIBLE


def test_iteration_cap_yields_max_iter_status_not_an_error():
    rng = np.random.default_rng(0)
    statuses = []
    for _ in range(10):
        prob = random_feasible_problem(rng, d=6, m=5, ridge=1e-2)
        sol = solve(prob, SolverConfig(max_iter=1))
        statuses.append(sol.status)
        assert sol.status in (SolverStatus.OPTIMAL, SolverStatus.MAX_ITER)
    assert SolverStatus.MAX_ITER in statuses


def test_singular_unbounded_problem_raises_numeric_error():
    prob = QPProblem(Q=np.zeros((2, 2)), p=np.array([1.0, 0.0]),
                     G=np.zeros((0, 2)), h=np.zeros(0))
    with pytest.raises(QPNumericError):
        solve(prob)


def test_problem_validation():
    with pytest.raises(ValueError):
        QPProblem(Q=np.array([[1.0, 0.5], [0.0, 1.0]]), p=np.zeros(2),
                  G=np.zeros((0, 2)), h=np.zeros(0))
    with pytest.raises(ValueError):
        QPProblem(Q=np.eye(2), p=np.zeros(3), G=np.zeros((0, 2)), h=np.zeros(0))
    with pytest.raises(ValueError):
        QPProblem(Q=np.eye(2), p=np.zeros(2), G=np.array([[1.0, 0.0]]), h=np.zeros(2))
    with pytest.raises(ValueError):
        QPProblem(Q=np.eye(2), p=np.zeros(2), G=np.zeros((0, 2)), h=np.zeros(0),
                  W=None, b=np.zeros(1))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(regularization=-1e-3)


# ---------------------------------------------------------------------------
# batching


def test_batch_of_one_equals_solve():
    rng = np.random.default_rng(5)
    prob = random_feasible_problem(rng, d=5, m=4)
    single = solve(prob)
    [batched] = solve_batch([prob])
    assert np.array_equal(single.z, batched.z)
    assert np.array_equal(single.ineq_mult, batched.ineq_mult)


def test_batch_matches_sequential_loop_bitwise():
    rng = np.random.default_rng(6)
    probs = [random_feasible_problem(rng, d=int(rng.integers(1, 8)),
                                     m=int(rng.integers(1, 6))) for _ in range(64)]
    batched = solve_batch(probs)
    for prob, got in zip(probs, batched):
        ref = solve(prob)
        assert np.array_equal(ref.z, got.z)
        assert ref.status == got.status


def test_duplicated_problem_solves_identically():
    rng = np.random.default_rng(7)
    prob = random_feasible_problem(rng, d=4, m=3)
    a, b = solve_batch([prob, prob])
    assert np.array_equal(a.z, b.z)


def test_batch_captures_per_problem_errors_without_aborting():
    rng = np.random.default_rng(8)
    good = random_feasible_problem(rng, d=3, m=2)
    bad = QPProblem(Q=np.zeros((2, 2)), p=np.array([1.0, 0.0]),
                    G=np.zeros((0, 2)), h=np.zeros(0))
    first, err, last = solve_batch([good, bad, good])
    assert isinstance(err, QPNumericError)
    assert first.status == SolverStatus.OPTIMAL
    assert np.array_equal(first.z, last.z)


# ---------------------------------------------------------------------------
# serialization


def test_problem_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    prob = random_feasible_problem(rng, d=5, m=3, with_eq=True)
    path = tmp_path / "problem.json"
    dump_problem(prob, path)
    loaded = load_problem(path)
    for name in ("Q", "p", "G", "h", "W", "b"):
        assert np.array_equal(getattr(prob, name), getattr(loaded, name))
    assert np.array_equal(solve(prob).z, solve(loaded).z)
