import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sidelab.errors import GridMismatch
from sidelab.noise import NoisePlan


def make_plan(seed=0, traj=0, m=2, delta=0.25, horizon=16.0):
    return NoisePlan(seed, traj, m, delta, horizon)


class TestGrid:
    def test_delta_must_divide_horizon(self):
        with pytest.raises(GridMismatch):
            NoisePlan(0, 0, 1, 0.3, 1.0)

    def test_level_must_be_nested(self):
        plan = NoisePlan(0, 0, 1, 0.5, 3.0)  # 6 finest steps
        assert plan.increments(1).shape == (3, 1)
        with pytest.raises(GridMismatch):
            plan.increments(2)  # 6 not divisible by 4

    def test_level_for(self):
        plan = make_plan()
        assert plan.level_for(0.25) == 0
        assert plan.level_for(1.0) == 2
        with pytest.raises(GridMismatch):
            plan.level_for(0.75)


class TestDistribution:
    def test_finest_level_variance(self):
        plan = NoisePlan(2024, 0, 1, 0.015625, 1024.0)  # 65536 draws
        inc = plan.increments(0)[:, 0]
        assert inc.mean() == pytest.approx(0.0, abs=0.002)
        assert inc.var() == pytest.approx(0.015625, rel=0.03)

    def test_xi_moments_over_1e5_draws(self):
        plan = NoisePlan(7, 0, 1, 1.0, 8.0)
        draws = plan.xi_block(100_000)[:, 0]
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var(ddof=1) - 1.0) < 0.03

    def test_stream_independence(self):
        plan = NoisePlan(13, 0, 1, 1.0, 8.0)
        brownian = plan.standard_normals(100_000)[:, 0]
        impulse = plan.xi_block(100_000)[:, 0]
        corr = np.corrcoef(brownian, impulse)[0, 1]
        assert abs(corr) < 0.01


class TestNesting:
    def test_pairwise_identity_is_exact(self):
        plan = make_plan(seed=5)
        inc0 = plan.increments(0)
        inc1 = plan.increments(1)
        inc2 = plan.increments(2)
        assert np.array_equal(inc1, inc0[0::2] + inc0[1::2])
        assert np.array_equal(inc2, inc1[0::2] + inc1[1::2])

    def test_total_is_consistent_across_levels(self):
        plan = make_plan(seed=9, delta=0.125, horizon=16.0)  # 128 = 2^7 steps
        # folding all the way down gives B(horizon) identically per level
        totals = [plan.increments(level) for level in range(8)]
        full = totals[-1]
        assert full.shape[0] == 1
        for level in range(7):
            folded = totals[level]
            while folded.shape[0] > 1:
                folded = folded[0::2] + folded[1::2]
            assert np.array_equal(folded, full)

    def test_brownian_path_starts_at_zero(self):
        plan = make_plan(seed=1)
        times, values = plan.brownian_path(0)
        assert times[0] == 0.0 and np.all(values[0] == 0.0)
        assert np.allclose(np.diff(values, axis=0), plan.increments(0))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 100), st.integers(1, 3))
    def test_nesting_property(self, seed, traj, level):
        plan = NoisePlan(seed, traj, 1, 0.5, 16.0)
        coarse = plan.increments(level)
        fine = plan.increments(level - 1)
        assert np.array_equal(coarse, fine[0::2] + fine[1::2])


class TestDeterminism:
    def test_equal_plans_agree_bitwise(self):
        a = make_plan(seed=21, traj=3)
        b = make_plan(seed=21, traj=3)
        assert np.array_equal(a.increments(0), b.increments(0))
        assert np.array_equal(a.xi_block(50), b.xi_block(50))

    def test_xi_is_reproducible(self):
        plan = make_plan(seed=4)
        assert np.array_equal(plan.xi(17), plan.xi(17))

    def test_cache_growth_keeps_prefix(self):
        plan = make_plan(seed=8)
        head = plan.xi_block(10).copy()
        plan.xi(5000)  # force regeneration at a larger size
        assert np.array_equal(plan.xi_block(10), head)

    def test_trajectories_differ(self):
        a = make_plan(seed=21, traj=0)
        b = make_plan(seed=21, traj=1)
        assert not np.array_equal(a.increments(0), b.increments(0))

    def test_xi_index_starts_at_one(self):
        with pytest.raises(ValueError):
            make_plan().xi(0)
