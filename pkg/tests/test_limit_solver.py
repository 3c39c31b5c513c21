"""Delay-equation solvers against independent oracles.

For the exponential kernel the limit system collapses to the classical SIR
ODE in (S, J) with J(0) = I0 tau_bar(0) / beta, which gives a reference
computable to high accuracy with a stiff ODE integrator.  The linearized
system with equilibrium initial ages has the closed form
b(t) = I0 alpha e^{alpha t}.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from epichain import (
    ContactRate, ExponentialKernel, MarkovSIR, compartment_curve, final_size,
    final_size_settled_contact, initial_condition, picard_delay, solve_delay,
    solve_linearized,
)


def _sir_ode(sol):
    """High-accuracy (S, J) reference on sol's grid."""
    kern, ic = sol.kernel, sol.ic
    j0 = ic.i0 * float(ic.tau_bar.value(0.0)) / kern.beta

    def rhs(_t, y):
        s, j = y
        return [-kern.beta * s * j, kern.beta * s * j - kern.gamma * j]

    out = solve_ivp(rhs, (0.0, float(sol.t[-1])), [sol.s0, j0],
                    rtol=1e-11, atol=1e-13, dense_output=True)
    return out.sol(sol.t)


class TestMarching:
    def test_s_matches_ode(self, sol):
        s_ode = _sir_ode(sol)[0]
        assert np.max(np.abs(sol.S - s_ode)) < 3e-5

    def test_incidence_matches_ode(self, sol):
        s_ode, j_ode = _sir_ode(sol)
        b_ode = sol.kernel.beta * s_ode * j_ode
        assert np.max(np.abs(sol.b - b_ode)) < 3e-5

    def test_frozen_incidence_value(self, sol):
        assert float(sol.b_at(5.0)) == pytest.approx(0.040383, abs=5e-5)

    def test_b_plus_s_identity(self, sol):
        assert np.array_equal(sol.B, sol.s0 - sol.S)

    def test_cumulative_consistent_with_quadrature(self, sol):
        quad = np.concatenate([[0.0], np.cumsum(0.5 * sol.dt * (sol.b[1:] + sol.b[:-1]))])
        assert np.max(np.abs(sol.B - quad)) < 5e-5

    def test_monotone(self, sol):
        assert np.all(np.diff(sol.S) <= 0)
        assert np.all(np.diff(sol.B) >= 0)
        assert np.all(sol.b >= 0)

    def test_residual_small(self, sol):
        assert sol.renewal_residual < 1e-10

    def test_b_at_negative_times(self, sol):
        # history is the initial age density: b(-u) = I0 g(u)
        u = np.array([0.5, 2.0])
        assert np.allclose(sol.b_at(-u), 0.01 * 0.5 * np.exp(-0.5 * u), rtol=1e-12)

    def test_rejects_incommensurate_grid(self, kernel, unit_contact, ic):
        with pytest.raises(ValueError):
            solve_delay(kernel, unit_contact, ic, 5.0, 0.003)

    def test_rejects_horizon_off_grid(self, kernel, unit_contact, ic):
        with pytest.raises(ValueError):
            solve_delay(kernel, unit_contact, ic, 5.0025, 0.005)


class TestPicard:
    def test_agrees_with_marching(self, kernel, unit_contact, ic, sol):
        res = picard_delay(kernel, unit_contact, ic, 25.0, 0.005)
        assert np.max(np.abs(res.solution.b - sol.b)) < 1e-10
        assert res.iterations < 200
        assert res.weighted_change < 1e-12

    def test_step_contact_agreement(self, kernel, ic):
        c = ContactRate((0.0, 4.0, 8.0), (1.0, 0.3, 0.8), "step")
        march = solve_delay(kernel, c, ic, 12.0, 0.01)
        pic = picard_delay(kernel, c, ic, 12.0, 0.01).solution
        assert np.max(np.abs(march.b - pic.b)) < 1e-10


class TestLinearized:
    def test_equilibrium_closed_form(self, kernel, ic, alpha):
        lin = solve_linearized(kernel, ic, 5.0, 0.005)
        exact = ic.i0 * alpha * np.exp(alpha * lin.t)
        assert np.max(np.abs(lin.b / exact - 1.0)) < 1e-4

    def test_nonlinear_solution_approaches_linearized(self, kernel):
        ic_small = initial_condition(kernel, 1e-8, age_rate=0.5)
        full = solve_delay(kernel, ContactRate.constant(1.0), ic_small, 3.0, 0.005)
        lin = solve_linearized(kernel, ic_small, 3.0, 0.005)
        assert np.max(np.abs(full.b / lin.b - 1.0)) < 1e-4


class TestFinalSize:
    def test_reference_value(self):
        assert final_size(0.5, 1.5, 0.01, 1.0) == pytest.approx(0.58287, abs=1e-5)

    def test_fixed_point_equation(self):
        x = final_size(0.5, 1.5, 0.01, 1.0)
        lhs = x - 0.01
        rhs = 0.99 * (1.0 - math.exp(-(1.5 * lhs + 0.01 * 0.5)))
        assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_solver_reaches_fixed_point(self, sol):
        fp = final_size(sol.ic.r0_bar, sol.kernel.r0, sol.ic.i0, 1.0)
        assert float(sol.B[-1]) + sol.ic.i0 == pytest.approx(fp, abs=1.5e-3)

    def test_settled_contact_matches_scalar_on_constant(self, sol):
        fp = final_size(sol.ic.r0_bar, sol.kernel.r0, sol.ic.i0, 1.0)
        assert final_size_settled_contact(sol) == pytest.approx(fp, abs=2e-3)

    def test_subcritical_outbreak_small(self):
        total = final_size(0.3, 0.8, 0.001, 1.0)
        assert 0.001 < total < 0.01

    def test_rejects_bad_i0(self):
        with pytest.raises(ValueError):
            final_size(0.5, 1.5, 0.0, 1.0)


class TestCompartmentCurve:
    def test_sir_mass_balance(self, sol, model):
        frac_i = compartment_curve(sol, model, "I")
        frac_r = compartment_curve(sol, model, "R")
        total = sol.S + frac_i + frac_r
        assert np.max(np.abs(total - 1.0)) < 2e-4

    def test_initial_infectious_fraction(self, sol, model):
        # E_g[e^{-Z}] = (1/2)/(3/2) = 1/3 of the seeded mass is still in I
        frac_i = compartment_curve(sol, model, "I")
        assert frac_i[0] == pytest.approx(0.01 / 3.0, abs=2e-5)

    def test_matches_ode_infectious(self, sol, model):
        j_ode = _sir_ode(sol)[1]
        frac_i = compartment_curve(sol, model, "I")
        assert np.max(np.abs(frac_i - j_ode)) < 1e-4


@given(
    beta=st.floats(0.5, 2.5),
    gamma=st.floats(0.4, 1.6),
    i0=st.floats(1e-4, 0.2),
)
@settings(max_examples=15, deadline=None)
def test_solver_invariants(beta, gamma, i0):
    kern = ExponentialKernel(beta, gamma, step=0.02, a_max=30.0)
    ic = initial_condition(kern, i0, age_rate=max(beta - gamma, 0.1))
    run = solve_delay(kern, ContactRate.constant(0.9), ic, 6.0, 0.02)
    assert np.all(run.b >= 0)
    assert np.all(np.diff(run.S) <= 1e-15)
    assert np.all(run.S > 0)
    assert run.renewal_residual < 1e-9
    assert np.array_equal(run.B, run.s0 - run.S)
