import pytest

from lagmpc import (
    BenchmarkParams,
    DualTrajectory,
    Trajectory,
    make_benchmark,
    make_lq_benchmark,
    solve_full,
)


def case1_params(N: int) -> BenchmarkParams:
    return BenchmarkParams(C1=8.0, C2=1.0, d_profile="constant", d_amplitude=1.0, N=N)


def zero_guess(model):
    return Trajectory.zeros(model.dims), DualTrajectory.zeros(model.dims)


@pytest.fixture(scope="session")
def case1_model_n200():
    return make_benchmark(case1_params(200))


@pytest.fixture(scope="session")
def case1_solution_n200(case1_model_n200):
    sol = solve_full(case1_model_n200, zero_guess(case1_model_n200), tol=1e-10)
    assert sol.converged
    return sol


@pytest.fixture(scope="session")
def lq_case1_model_n200():
    return make_lq_benchmark(case1_params(200))
