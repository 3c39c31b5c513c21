import pytest

from epichain import (
    ContactRate, MarkovSIR, initial_condition, malthusian_parameter, solve_delay,
)


@pytest.fixture(scope="session")
def model():
    return MarkovSIR(1.5, 1.0, step=0.005, a_max=40.0)


@pytest.fixture(scope="session")
def kernel(model):
    return model.kernel


@pytest.fixture(scope="session")
def ic(kernel):
    return initial_condition(kernel, 0.01, age_rate=0.5)


@pytest.fixture(scope="session")
def unit_contact():
    return ContactRate.constant(1.0)


@pytest.fixture(scope="session")
def alpha(kernel):
    return malthusian_parameter(kernel).alpha


@pytest.fixture(scope="session")
def sol(kernel, unit_contact, ic):
    """Reference limit solution: tau = 1.5 e^{-a}, g = Exp(1/2), I0 = 0.01."""
    return solve_delay(kernel, unit_contact, ic, 25.0, 0.005)
