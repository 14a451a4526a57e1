import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abmcal.design import ABM_SPACE
from abmcal.sensitivity import (MONOTONE, NEGLIGIBLE, NONLINEAR, MorrisStats, build_trajectories,
                                default_delta, elementary_effects, morris_stats, rank_variables)


def _losses(trajs, f):
    return np.array([f(p) for t in trajs for p in t.points])


class TestTrajectories:
    def test_default_budget(self):
        trajs = build_trajectories(ABM_SPACE, 6, seed=0)
        assert len(trajs) == 6
        assert sum(len(t.points) for t in trajs) == 36

    def test_default_delta(self):
        assert default_delta(4) == pytest.approx(2.0 / 3.0)

    @settings(max_examples=40, deadline=None)
    @given(d=st.integers(1, 8), r=st.integers(1, 10), seed=st.integers(0, 10_000),
           levels=st.sampled_from([4, 6, 8]))
    def test_structure(self, d, r, seed, levels):
        for t in build_trajectories(d, r, seed=seed, levels=levels):
            assert t.points.shape == (d + 1, d)
            assert sorted(t.perturbed_dim) == list(range(d))
            assert np.all((t.points >= 0) & (t.points <= 1))
            diffs = np.diff(t.points, axis=0)
            for k, j in enumerate(t.perturbed_dim):
                moved = np.flatnonzero(np.abs(diffs[k]) > 1e-12)
                assert list(moved) == [j]
                assert abs(diffs[k, j]) == pytest.approx(t.delta, abs=1e-12)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.2])
    def test_invalid_delta(self, delta):
        with pytest.raises(ValueError):
            build_trajectories(3, 2, delta=delta)

    def test_zero_trajectories(self):
        with pytest.raises(ValueError):
            build_trajectories(3, 0)

    def test_deterministic(self):
        a = build_trajectories(5, 6, seed=9)
        b = build_trajectories(5, 6, seed=9)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.points, y.points)


class TestElementaryEffects:
    def test_linear_function_gives_coefficients(self):
        a = np.array([3.0, -1.0, 0.0, 2.5])
        trajs = build_trajectories(4, 5, seed=2)
        ee = elementary_effects(trajs, _losses(trajs, lambda x: a @ x + 7.0))
        np.testing.assert_allclose(ee, np.tile(a, (5, 1)), atol=1e-12)
        s = morris_stats(ee)
        np.testing.assert_allclose(s.mu, a, atol=1e-12)
        np.testing.assert_allclose(s.sigma, 0.0, atol=1e-12)

    def test_matches_direct_formula(self):
        # independent oracle: (f(x + step e_j) - f(x)) / step along each trajectory
        f = lambda x: np.sin(3 * x[0]) * x[1] + x[2] ** 2  # noqa: E731
        trajs = build_trajectories(3, 4, seed=5)
        ee = elementary_effects(trajs, _losses(trajs, f))
        for i, t in enumerate(trajs):
            for k, j in enumerate(t.perturbed_dim):
                x0, x1 = t.points[k], t.points[k + 1]
                assert ee[i, j] == pytest.approx((f(x1) - f(x0)) / (x1[j] - x0[j]), rel=1e-12)

    def test_reshaped_losses_accepted(self):
        trajs = build_trajectories(2, 3, seed=0)
        y = _losses(trajs, lambda x: x.sum())
        np.testing.assert_array_equal(elementary_effects(trajs, y), elementary_effects(trajs, y.reshape(3, 3)))

    def test_missing_loss_rejected(self):
        trajs = build_trajectories(2, 3, seed=0)
        y = _losses(trajs, lambda x: x.sum())
        y[4] = np.nan
        with pytest.raises(ValueError):
            elementary_effects(trajs, y)
        with pytest.raises(ValueError):
            elementary_effects(trajs, y[:-1])


class TestStats:
    def test_hand_computed(self):
        ee = np.array([[1.0, -2.0], [3.0, 2.0]])
        s = morris_stats(ee)
        np.testing.assert_allclose(s.mu, [2.0, 0.0])
        np.testing.assert_allclose(s.sigma, [1.0, 2.0])
        np.testing.assert_allclose(s.mu_star, [2.0, 2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), min_size=1, max_size=8))
    def test_invariants(self, rows):
        s = morris_stats(np.array(rows))
        assert np.all(s.mu_star >= np.abs(s.mu) - 1e-9)
        assert np.all(s.sigma >= 0) and np.all(s.mu_star >= 0)

    def test_ranking_and_tags(self):
        s = MorrisStats(mu=np.array([0.0, 5.0, -1.0]), sigma=np.array([0.0, 0.5, 2.0]),
                        mu_star=np.array([0.0, 5.0, 1.5]))
        ranked = rank_variables(s)
        assert [j for j, _ in ranked] == [1, 2, 0]
        tags = dict(ranked)
        assert tags[1] == (MONOTONE,)
        assert tags[2] == (NONLINEAR,)
        assert tags[0] == (NEGLIGIBLE,)
