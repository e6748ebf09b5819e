import numpy as np
import pytest

from lagmpc import (
    DualTrajectory,
    Trajectory,
    make_benchmark,
    make_quadratic_model,
    solve_full,
    verify_solution_assumptions,
)

from conftest import case1_params, zero_guess


def test_lq_converges_in_one_iteration(lq_case1_model_n200):
    model = lq_case1_model_n200
    rng = np.random.default_rng(20)
    for _ in range(3):
        traj = Trajectory(rng.normal(size=(201, 1)), rng.normal(size=(200, 1)))
        traj.x[0] = model.x0
        dual = DualTrajectory(rng.normal(size=(201, 1)))
        sol = solve_full(model, (traj, dual), tol=1e-10)
        assert sol.converged
        assert sol.iterations == 1
        assert sol.kkt_residual < 1e-10


def test_case1_n200_from_zeros(case1_model_n200, case1_solution_n200):
    sol = case1_solution_n200
    assert sol.converged
    assert sol.iterations <= 15
    assert sol.kkt_residual < 1e-10


def test_solution_satisfies_stagewise_stationarity(case1_model_n200, case1_solution_n200):
    model, sol = case1_model_n200, case1_solution_n200
    for k in range(model.dims.N):
        _, gu = model.stage_cost_grad(k, sol.z_star.x[k], sol.z_star.u[k], model.d(k))
        _, B = model.dynamics_jac(k, sol.z_star.x[k], sol.z_star.u[k], model.d(k))
        resid = gu - B.T @ sol.lambda_star.at(k)
        assert np.linalg.norm(resid) < 1e-8


def test_resolve_from_solution_is_fixed_point(case1_model_n200, case1_solution_n200):
    sol = case1_solution_n200
    again = solve_full(
        case1_model_n200, (sol.z_star.copy(), sol.lambda_star.copy()), tol=1e-10
    )
    assert again.converged
    assert again.iterations == 0


def test_init_scale_insensitivity(case1_model_n200, case1_solution_n200):
    model = case1_model_n200
    N = model.dims.N
    traj = Trajectory(0.1 * np.ones((N + 1, 1)), 0.1 * np.ones((N, 1)))
    traj.x[0] = model.x0
    dual = DualTrajectory(0.1 * np.ones((N + 1, 1)))
    sol = solve_full(model, (traj, dual), tol=1e-10)
    assert sol.converged
    base = case1_solution_n200
    assert np.max(np.abs(sol.z_star.x - base.z_star.x)) < 1e-8
    assert np.max(np.abs(sol.z_star.u - base.z_star.u)) < 1e-8
    assert np.max(np.abs(sol.lambda_star.lam - base.lambda_star.lam)) < 1e-8


def test_max_iter_exhaustion_returns_best():
    model = make_benchmark(case1_params(60))
    sol = solve_full(model, zero_guess(model), tol=1e-14, max_iter=1)
    assert not sol.converged
    assert sol.iterations == 1
    assert np.isfinite(sol.kkt_residual)


def test_init_validation():
    model = make_benchmark(case1_params(10))
    traj, dual = zero_guess(model)
    traj.x[0] = 1.0
    with pytest.raises(ValueError):
        solve_full(model, (traj, dual))
    short = Trajectory(np.zeros((10, 1)), np.zeros((9, 1)))
    with pytest.raises(ValueError):
        solve_full(model, (short, DualTrajectory(np.zeros((10, 1)))))


def test_certificates_case1(case1_model_n200, case1_solution_n200):
    cert = verify_solution_assumptions(
        case1_model_n200, case1_solution_n200, gamma_H=0.5, gamma_C=1.0, t=1
    )
    assert cert.sosc_pass
    assert cert.reduced_hessian_min_eig >= 0.5 - 1e-6
    assert cert.controllability_pass
    assert cert.controllability_min_eig == pytest.approx(1.0, abs=1e-12)
    assert cert.all_pass


def test_certificates_lq_positive_definite():
    model = make_quadratic_model(
        Q=2.0 * np.eye(2), S=np.zeros((2, 2)), R=np.eye(2), A=0.5 * np.eye(2),
        B=np.eye(2), QN=2.0 * np.eye(2), x0=np.zeros(2), N=12,
    )
    sol = solve_full(model, zero_guess(model), tol=1e-10)
    assert sol.converged
    cert = verify_solution_assumptions(model, sol, gamma_H=0.5, gamma_C=0.5, t=1)
    assert cert.sosc_pass and cert.controllability_pass


def test_certificates_uncontrollable_fails_everywhere():
    # dynamics ignore the control entirely: Xi = 0 at every stage
    model = make_quadratic_model(
        Q=np.eye(1), S=np.zeros((1, 1)), R=np.eye(1), A=0.5 * np.eye(1),
        B=np.zeros((1, 1)), QN=np.eye(1), x0=np.zeros(1), N=10,
    )
    sol = solve_full(model, zero_guess(model), tol=1e-10)
    assert sol.converged
    cert = verify_solution_assumptions(model, sol, gamma_H=0.1, gamma_C=0.5, t=2)
    assert not cert.controllability_pass
    assert np.all(cert.controllability_per_stage < 1e-15)


def test_certificates_require_convergence(case1_model_n200):
    model = case1_model_n200
    bad = solve_full(model, zero_guess(model), tol=1e-16, max_iter=0)
    assert not bad.converged
    with pytest.raises(ValueError):
        verify_solution_assumptions(model, bad, gamma_H=0.5, gamma_C=1.0, t=1)
