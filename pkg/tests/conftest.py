import pytest

from meantau.portfolio import PortfolioParams, optimal_policy, solve_tau, to_problem_spec


@pytest.fixture(scope="session")
def params():
    return PortfolioParams()


@pytest.fixture(scope="session")
def tau_solution(params):
    return solve_tau(params)


@pytest.fixture(scope="session")
def wealth_spec(params):
    return to_problem_spec(params)


@pytest.fixture(scope="session")
def wealth_policy(params, tau_solution):
    return optimal_policy(params, tau_solution)
