"""Dual tree sampler: agreement with the limit solver, scalar/batch parity,
geodesic path structure, and the conditioned first-step law."""

import math

import numpy as np
import pytest

from epichain import (
    conditioned_first_step, estimate_B, sample_geodesic, tree_params,
)
from epichain.poisson_tree import _batch_sigma, sample_root_decorations


@pytest.fixture(scope="module")
def params(kernel, ic, unit_contact):
    return tree_params(kernel, ic, unit_contact, horizon=8.0)


class TestEstimateB:
    def test_matches_solver(self, params, sol):
        grid = np.array([2.0, 5.0, 8.0])
        curve = estimate_B(params, grid, 20_000, seed=801)
        b_sol = np.interp(grid, sol.t, sol.B)
        assert np.all(np.abs(curve.estimate - b_sol) < 4.0 * curve.se)

    def test_estimates_monotone(self, params):
        grid = np.array([1.0, 3.0, 6.0, 8.0])
        curve = estimate_B(params, grid, 5_000, seed=802)
        assert np.all(np.diff(curve.estimate) >= 0)
        assert np.all(curve.se > 0)

    def test_rejects_small_sample(self, params):
        with pytest.raises(ValueError):
            estimate_B(params, [2.0], 100, seed=1)

    def test_rejects_grid_beyond_horizon(self, params):
        with pytest.raises(ValueError):
            estimate_B(params, [9.0], 5_000, seed=1)

    def test_node_cap_triggers(self, kernel, ic, unit_contact):
        tight = tree_params(kernel, ic, unit_contact, horizon=8.0, node_cap=2)
        with pytest.raises(RuntimeError):
            estimate_B(tight, [2.0], 2_000, seed=3)


class TestScalarBatchParity:
    def test_sigma_bitwise_equal(self, params):
        batch, _ = _batch_sigma(params, 64, seed=811)
        for i in range(64):
            one = sample_geodesic(params, seed=811, index=i)
            scalar = math.inf if one.censored else one.sigma
            assert scalar == batch[i] or (math.isinf(scalar) and math.isinf(batch[i]))

    def test_first_step_matches_path(self, params):
        _, first = _batch_sigma(params, 64, seed=811, want_first_step=True)
        for i in range(64):
            one = sample_geodesic(params, seed=811, index=i)
            if one.censored:
                assert math.isnan(first[i])
            else:
                want = one.path_times[1] if one.path_times.size > 1 else -one.terminal_age
                assert first[i] == want


class TestGeodesicPaths:
    def test_path_structure(self, params):
        found = 0
        for i in range(200):
            one = sample_geodesic(params, seed=821, index=i)
            if one.censored:
                continue
            found += 1
            assert one.path_times[0] == one.sigma
            assert np.all(np.diff(one.path_times) < 0)
            assert one.terminal_age is not None and one.terminal_age > 0
            assert one.path_times[-1] == pytest.approx(-one.terminal_age)
        assert found > 20

    def test_decorated_courses(self, kernel, ic, unit_contact, model):
        p = tree_params(kernel, ic, unit_contact, horizon=8.0, model=model)
        for i in range(80):
            one = sample_geodesic(p, seed=823, index=i)
            if one.censored:
                continue
            assert one.path_courses is not None
            assert len(one.path_courses) == one.path_times.size
            for course in one.path_courses:
                course.validate(model)
            return
        pytest.fail("all 80 samples censored")


class TestConditionedFirstStep:
    def test_window_and_ordering(self, params):
        sample = conditioned_first_step(params, 4.0, 0.5, 30_000, seed=831)
        assert sample.n_conditioned >= 200
        assert np.all(sample.sigmas >= 4.0)
        assert np.all(sample.sigmas <= 4.5)
        assert np.all(sample.values < sample.sigmas)

    def test_too_few_conditioned_raises(self, params):
        with pytest.raises(RuntimeError):
            conditioned_first_step(params, 7.9, 0.05, 2_000, seed=832)


class TestRootDecorations:
    def test_shapes_and_marginals(self, params):
        k_s, k_i, w, wbar, z = sample_root_decorations(params, 40_000, seed=841)
        assert w.size == k_s.sum()
        assert z.size == wbar.size == k_i.sum()
        # z-marginal of the joint law is Exp(3/2)
        se = z.std(ddof=1) / math.sqrt(z.size)
        assert abs(z.mean() - 2.0 / 3.0) < 4 * se
        # delay edges follow nu_bar = Exp(1)
        se_w = wbar.std(ddof=1) / math.sqrt(wbar.size)
        assert abs(wbar.mean() - 1.0) < 4 * se_w
