"""Backward chains: renewal jumps against the closed-form tilted density,
the martingale and survival diagnostics, kernel row sums, and the
h-transform identities linking killed renewal chains to conditioned ones."""

import math

import numpy as np
import pytest

from epichain import (
    apply_killing, backward_density, h_row_sums, histogram_from_samples,
    initial_condition, l1_histogram_distance, ks_distance, make_rng,
    martingale_diagnostic, reweighted_first_steps, sample_h_chain,
    sample_h_chains, sample_h_first_steps, sample_renewal, solve_delay,
    survival_representation_check,
)


@pytest.fixture(scope="module")
def r_density(kernel, alpha):
    return backward_density(kernel, alpha)


class TestRenewalChain:
    def test_path_structure(self, kernel, alpha, r_density):
        rng = make_rng(71, "renewal-struct")
        for _ in range(50):
            chain = sample_renewal(6.0, alpha, kernel, rng, r_density=r_density)
            assert chain.times[0] == 6.0
            assert np.all(np.diff(chain.times) < 0)
            assert chain.times[-1] <= 0
            assert np.all(chain.times[:-1] > 0)
            assert np.all(chain.increments > 0)

    def test_increments_follow_tilted_density(self, kernel, alpha, r_density):
        # r(u) = e^{-u/2} 1.5 e^{-u} = Exp(3/2)
        rng = make_rng(73, "renewal-incr")
        inc = np.concatenate([
            sample_renewal(8.0, alpha, kernel, rng, r_density=r_density).increments
            for _ in range(1_500)])
        d = ks_distance(inc, lambda x: 1.0 - np.exp(-1.5 * np.asarray(x)))
        assert d < 0.02, f"KS distance {d:.4f} against Exp(3/2)"

    def test_nonpositive_start_is_terminal(self, kernel, alpha):
        rng = make_rng(74, "renewal-neg")
        chain = sample_renewal(-0.3, alpha, kernel, rng)
        assert chain.stop_index == 0

    def test_killing_flags(self, kernel, alpha, sol, unit_contact, r_density):
        rng = make_rng(75, "killing")
        seen_dead = seen_alive = False
        for _ in range(200):
            chain = sample_renewal(10.0, alpha, kernel, rng, r_density=r_density)
            with pytest.raises(ValueError):
                chain.survived
            killed = apply_killing(chain, sol, unit_contact, rng)
            if killed.survived:
                seen_alive = True
                assert killed.killing_index == math.inf
            else:
                seen_dead = True
                assert 0 <= killed.killing_index < killed.stop_index
        assert seen_dead and seen_alive


class TestMartingale:
    def test_means_match_reference(self, sol):
        rep = martingale_diagnostic(4.0, sol, 60_000, k_max=8, seed=77)
        assert rep.reference == pytest.approx(
            float(sol.b_at(4.0)) * math.exp(-0.5 * 4.0), rel=1e-6)
        assert rep.mean[0] == pytest.approx(rep.reference, abs=1e-12)
        assert rep.max_deviation_in_se < 4.0

    def test_reference_frozen_value(self, sol):
        # b(5) e^{-5/2} for the benchmark scenario
        rep = martingale_diagnostic(5.0, sol, 2_000, k_max=2, seed=78)
        assert rep.reference == pytest.approx(0.003315, abs=5e-6)


class TestSurvivalRepresentation:
    def test_estimates_b(self, sol):
        rep = survival_representation_check(3.0, sol, 200_000, seed=79)
        assert abs(rep.b_solver - rep.estimate) < rep.band
        assert rep.within_band
        # the unit-normalized statistic overshoots b by exactly 1/I0
        assert rep.discrepancy_ratio == pytest.approx(100.0, rel=0.05)

    def test_requires_equilibrium_age_density(self, kernel, unit_contact):
        ic_off = initial_condition(kernel, 0.01, age_rate=0.8)
        sol_off = solve_delay(kernel, unit_contact, ic_off, 6.0, 0.005)
        with pytest.raises(ValueError):
            survival_representation_check(3.0, sol_off, 1_000, seed=80)


class TestConditionedChain:
    def test_batch_structure(self, sol):
        batch = sample_h_chains(6.0, sol, 400, seed=81)
        assert batch.times.shape[0] == 400
        finite = ~np.isnan(batch.times)
        assert np.array_equal(finite.sum(axis=1) - 1, batch.lengths)
        for i in range(0, 400, 40):
            row = batch.times[i][finite[i]]
            assert row[0] == 6.0
            assert np.all(np.diff(row) < 0)
            assert row[-1] <= 0 < row[-2]
        assert np.all(batch.terminals <= 0)
        assert np.array_equal(batch.first_steps, batch.times[:, 1])
        assert np.all(batch.first_increments > 0)

    def test_scalar_matches_structure(self, sol):
        rng = make_rng(83, "h-scalar")
        chain = sample_h_chain(5.0, sol, rng)
        assert chain.times[0] == 5.0
        assert np.all(np.diff(chain.times) < 0)
        assert chain.times[-1] <= 0

    def test_first_steps_stay_below_start(self, sol):
        starts = np.linspace(2.0, 8.0, 500)
        nxt = sample_h_first_steps(starts, sol, seed=85)
        assert np.all(nxt < starts)

    def test_rejects_vanishing_incidence(self, sol):
        # far in the negative past, b(-u) = I0 g(u) underflows the guard
        with pytest.raises(ValueError):
            sample_h_chains(-50.0, sol, 4, seed=1)


class TestHTransformIdentities:
    def test_row_sums_are_one(self, sol):
        idx = np.arange(100, 5001, 350)
        rows = h_row_sums(sol, idx)
        tol = max(10.0 * sol.renewal_residual, 1e-12)
        assert np.max(np.abs(rows - 1.0)) < tol

    def test_reweighted_survivors_match_h_law(self, sol, alpha):
        rew = reweighted_first_steps(5.0, sol, 30_000, seed=87, alpha=alpha)
        assert rew.n_survivors > 10_000
        # terminal-h martingale: E[weight 1{survive}] = 1, killed chains
        # contributing zero (survivor weights alone are nearly constant here)
        mean_w = float(rew.weights.sum()) / rew.n_samples
        m2 = float(np.square(rew.weights).sum()) / rew.n_samples
        se_w = math.sqrt(max(m2 - mean_w**2, 0.0) / rew.n_samples)
        assert abs(mean_w - 1.0) < 5 * se_w

        direct = sample_h_first_steps(np.full(30_000, 5.0), sol, seed=88)
        edges = np.linspace(-6.0, 5.0, 45)
        h_rew = histogram_from_samples(rew.values, edges, weights=rew.weights)
        h_dir = histogram_from_samples(direct, edges)
        assert l1_histogram_distance(h_rew, h_dir) < 0.05


class TestLinearRegime:
    def test_increments_are_backward_generation_times(self, kernel, unit_contact):
        ic_small = initial_condition(kernel, 1e-3, age_rate=0.5)
        run = solve_delay(kernel, unit_contact, ic_small, 3.0, 0.005)
        batch = sample_h_chains(3.0, run, 4_000, seed=89)
        inc = batch.increments
        d = ks_distance(inc, lambda x: 1.0 - np.exp(-1.5 * np.asarray(x)))
        assert d < 0.02, f"KS distance {d:.4f}"
