import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abmcal.gp import (JITTER_LADDER, CholeskyError, KernelConfig, MeanFunction, ZERO_MEAN,
                       build_covariance, condition_on_pseudo, factor_covariance, fit_gp,
                       fit_hyperparameters, kernel_matrix, log_marginal_likelihood, make_model,
                       matern_correlation, matern_kernel, posterior, with_config)


def bessel_matern(r, nu):
    """General Matérn correlation via the modified Bessel function (mpmath oracle)."""
    if r == 0:
        return 1.0
    z = mpmath.sqrt(2 * nu) * r
    return float(mpmath.power(2, 1 - nu) / mpmath.gamma(nu) * mpmath.power(z, nu) * mpmath.besselk(nu, z))


def cfg(d=1, ls=0.3, sv=1.0, nug=0.0, nu=2.5):
    return KernelConfig(np.full(d, ls), sv, nug, nu)


class TestKernel:
    @pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
    @pytest.mark.parametrize("r", [0.0, 0.05, 0.7, 1.3, 4.0])
    def test_closed_forms_match_bessel(self, nu, r):
        assert matern_correlation(np.array(r), nu) == pytest.approx(bessel_matern(r, nu), rel=1e-12, abs=1e-15)

    def test_matern52_at_07(self):
        # frozen from the Bessel-function oracle
        assert matern_correlation(np.array(0.7), 2.5) == pytest.approx(bessel_matern(0.7, 2.5), rel=1e-13)
        assert bessel_matern(0.7, 2.5) == pytest.approx(0.706942681904098, rel=1e-12)

    def test_unsupported_nu(self):
        with pytest.raises(ValueError):
            matern_correlation(np.array(0.1), 1.0)

    def test_anisotropic_scaling(self):
        c = KernelConfig(np.array([0.5, 2.0]), 1.7)
        x, y = np.array([0.1, 0.2]), np.array([0.4, 0.9])
        r = np.sqrt(((x - y) ** 2 / c.lengthscales ** 2).sum())
        assert matern_kernel(x, y, c) == pytest.approx(1.7 * bessel_matern(r, 2.5), rel=1e-12)

    def test_nugget_only_on_diagonal_of_training_covariance(self):
        X = np.array([[0.0], [0.5]])
        K = build_covariance(X, cfg(nug=0.3), jitter=0.0)
        assert K[0, 0] == pytest.approx(1.3)
        assert K[0, 1] == pytest.approx(matern_kernel(X[0], X[1], cfg()))

    @pytest.mark.parametrize("bad", [dict(lengthscales=np.array([0.0])), dict(signal_variance=-1.0),
                                     dict(nugget_variance=-1e-3), dict(nu=3.5)])
    def test_config_validation(self, bad):
        base = dict(lengthscales=np.array([1.0]), signal_variance=1.0, nugget_variance=0.0, nu=2.5)
        base.update(bad)
        with pytest.raises(ValueError):
            KernelConfig(**base)

    def test_jitter_ladder_rescues_duplicates(self):
        X = np.array([[0.2], [0.2], [0.7]])
        L, jitter = factor_covariance(X, cfg())
        assert jitter in JITTER_LADDER
        np.testing.assert_allclose(L @ L.T, build_covariance(X, cfg(), jitter), atol=1e-12)

    def test_non_finite_inputs_rejected(self):
        with pytest.raises(ValueError):
            factor_covariance(np.array([[np.nan], [0.1]]), cfg())

    def test_factor_failure_raises(self, monkeypatch):
        def refuse(K):
            raise np.linalg.LinAlgError("not positive definite")
        monkeypatch.setattr(np.linalg, "cholesky", refuse)
        with pytest.raises(CholeskyError):
            factor_covariance(np.array([[0.2], [0.7]]), cfg())


def explicit_posterior(X, Y, c, Xs, jitter, mean=0.0):
    K = kernel_matrix(X, X, c) + (c.nugget_variance + jitter * c.signal_variance) * np.eye(len(X))
    Ks = kernel_matrix(Xs, X, c)
    Kinv = np.linalg.inv(K)
    mu = mean + Ks @ Kinv @ (Y - mean)
    var = c.signal_variance + c.nugget_variance - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    return mu, var


class TestPosterior:
    def test_interpolates_without_nugget(self):
        rng = np.random.default_rng(0)
        X = rng.random((8, 2))
        Y = np.sin(4 * X[:, 0]) + X[:, 1]
        m = make_model(X, Y, KernelConfig(np.array([0.4, 0.6]), 2.0))
        p = posterior(m, X)
        np.testing.assert_allclose(p.mean, Y, rtol=1e-8)
        assert np.all(p.variance < 1e-6)

    def test_three_point_matrix_oracle(self):
        X = np.array([[0.1], [0.45], [0.9]])
        Y = np.array([1.0, -0.5, 2.0])
        c = cfg(ls=0.35, sv=1.5, nug=0.01)
        Xs = np.array([[0.0], [0.3], [0.6], [1.2]])
        m = make_model(X, Y, c)
        mu, var = explicit_posterior(X, Y, c, Xs, m.jitter)
        p = posterior(m, Xs)
        np.testing.assert_allclose(p.mean, mu, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(p.variance, var, rtol=1e-10, atol=1e-12)

    def test_reverts_to_prior_far_away(self):
        X = np.array([[0.1], [0.2]])
        m = make_model(X, np.array([3.0, 4.0]), cfg(ls=0.1, sv=2.0, nug=0.1),
                       MeanFunction("constant", 1.5))
        p = posterior(m, np.array([50.0]))
        assert p.mean == pytest.approx(1.5, abs=1e-12)
        assert p.variance == pytest.approx(2.1, abs=1e-12)

    def test_network_mean_is_added(self):
        X = np.array([[0.1], [0.8]])
        net = MeanFunction("network", network=lambda Z: 2.0 * Z[:, 0])
        m = make_model(X, np.array([0.2, 1.6]), cfg(), net)
        # targets equal the mean function, so the posterior is the mean everywhere
        np.testing.assert_allclose(posterior(m, np.array([[0.3], [5.0]])).mean, [0.6, 10.0], atol=1e-9)

    def test_single_query_returns_scalars(self):
        m = make_model(np.array([[0.5]]), np.array([1.0]), cfg())
        p = posterior(m, np.array([0.2]))
        assert np.ndim(p.mean) == 0 and np.ndim(p.variance) == 0

    def test_dimension_mismatch(self):
        m = make_model(np.array([[0.5]]), np.array([1.0]), cfg())
        with pytest.raises(ValueError):
            posterior(m, np.array([[0.2, 0.3]]))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 12), nug=st.sampled_from([0.0, 1e-4, 0.1]))
    def test_variance_nonnegative_and_bounded(self, seed, n, nug):
        rng = np.random.default_rng(seed)
        X = rng.random((n, 2))
        m = make_model(X, rng.normal(size=n), KernelConfig(np.array([0.3, 0.5]), 1.3, nug))
        p = posterior(m, rng.random((50, 2)))
        assert np.all(p.variance >= 0)
        assert np.all(p.variance <= 1.3 + nug + 1e-9)

    def test_pseudo_conditioning_matches_refit(self):
        rng = np.random.default_rng(4)
        X = rng.random((6, 2))
        Y = rng.normal(size=6)
        c = KernelConfig(np.array([0.3, 0.4]), 1.0, 1e-3)
        m = make_model(X, Y, c)
        x = np.array([0.5, 0.5])
        y = float(posterior(m, x).mean)
        m2 = condition_on_pseudo(m, x, y)
        ref = make_model(np.vstack([X, x]), np.append(Y, y), c)
        Xs = rng.random((20, 2))
        np.testing.assert_allclose(posterior(m2, Xs).mean, posterior(ref, Xs).mean, atol=1e-12)
        # believing the mean leaves the mean unchanged but shrinks the variance nearby
        np.testing.assert_allclose(posterior(m2, Xs).mean, posterior(m, Xs).mean, atol=1e-8)
        assert posterior(m2, x).variance < posterior(m, x).variance
        assert m2.config == m.config


class TestLikelihood:
    def test_matches_dense_formula(self):
        rng = np.random.default_rng(2)
        X = rng.random((7, 2))
        Y = rng.normal(size=7)
        c = KernelConfig(np.array([0.3, 0.7]), 1.4, 0.05)
        K = kernel_matrix(X, X, c) + (0.05 + JITTER_LADDER[0] * 1.4) * np.eye(7)
        sign, logdet = np.linalg.slogdet(K)
        ref = -0.5 * Y @ np.linalg.solve(K, Y) - 0.5 * logdet - 3.5 * np.log(2 * np.pi)
        assert log_marginal_likelihood(X, Y, c) == pytest.approx(ref, rel=1e-10)

    def test_fit_beats_default_start(self):
        rng = np.random.default_rng(3)
        X = rng.random((20, 2))
        Y = np.sin(6 * X[:, 0]) + 0.1 * X[:, 1]
        c = fit_hyperparameters(X, Y, seed=0)
        start = KernelConfig(np.full(2, 0.5), float(np.mean(Y ** 2)), 1e-3 * float(np.mean(Y ** 2)))
        assert log_marginal_likelihood(X, Y, c) >= log_marginal_likelihood(X, Y, start)
        # the irrelevant second input gets the longer lengthscale
        assert c.lengthscales[1] > c.lengthscales[0]

    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(5)
        X = rng.random((10, 3))
        Y = X.sum(axis=1)
        a, b = fit_gp(X, Y, seed=7), fit_gp(X, Y, seed=7)
        np.testing.assert_array_equal(a.config.lengthscales, b.config.lengthscales)
        assert a.mean.kind == "constant" and a.mean.constant == pytest.approx(Y.mean())

    def test_zero_mean_fit(self):
        rng = np.random.default_rng(6)
        X = rng.random((12, 1))
        Y = 5.0 + np.cos(5 * X[:, 0])
        m = fit_gp(X, Y, ZERO_MEAN)
        np.testing.assert_allclose(posterior(m, X).mean, Y, atol=0.05)

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            fit_hyperparameters(np.array([[0.1], [0.2]]), np.array([1.0, 2.0]))

    def test_with_config(self):
        m = make_model(np.array([[0.1], [0.9]]), np.array([0.0, 1.0]), cfg())
        m2 = with_config(m, nugget_variance=0.5)
        assert m2.config.nugget_variance == 0.5 and m.config.nugget_variance == 0.0
