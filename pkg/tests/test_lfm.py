import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from physgp import gp
from physgp.lfm import (
    LFMConfig,
    LFMModel,
    MultiOutputSeries,
    build_joint_gram,
    canonical_signs,
    fit_exponential_relation,
    fit_lfm,
    infer_latent_forces,
    lf_auto_cov,
    lf_output_cross_cov,
    log_marginal_likelihood,
    mse_nmse,
    output_cross_cov,
    predict_joint,
    predict_outputs,
    sample_outputs,
)


def quad_output_cov(ell, nu_p, nu_q, t, tp):
    """Whole-line double convolution of the latent SE kernel, numerically."""
    f = lambda b, a: (np.exp(-(t - a) ** 2 / (2 * nu_p**2)) * np.exp(-(tp - b) ** 2 / (2 * nu_q**2))
                      * np.exp(-(a - b) ** 2 / (2 * ell**2)))
    v, _ = dblquad(f, t - 12 * nu_p, t + 12 * nu_p, tp - 12 * nu_q, tp + 12 * nu_q,
                   epsabs=0, epsrel=1e-10)
    return v


def quad_lf_output_cov(ell, nu_q, t, tp):
    f = lambda b: np.exp(-(tp - b) ** 2 / (2 * nu_q**2)) * np.exp(-(t - b) ** 2 / (2 * ell**2))
    v, _ = quad(f, tp - 12 * nu_q, tp + 12 * nu_q, epsabs=0, epsrel=1e-12, limit=200)
    return v


def random_config(rng, R, Q):
    return LFMConfig(rng.normal(size=(R, Q)), rng.uniform(0.3, 3, R), rng.uniform(0.1, 1.5, Q),
                     rng.uniform(0.01, 0.2, Q))


def dense_condition(K, Kx, Kxx, y):
    return Kx @ np.linalg.solve(K, y), Kxx - Kx @ np.linalg.solve(K, Kx.T)


class TestConfig:
    def test_shape_checks(self):
        with pytest.raises(ValueError):
            LFMConfig([[1.0, 1.0]], [1.0, 2.0], [1.0, 1.0], [0.1, 0.1])
        with pytest.raises(ValueError):
            LFMConfig([[1.0]], [0.0], [1.0], [0.1])
        with pytest.raises(ValueError):
            LFMConfig([[1.0]], [1.0], [1.0], [-0.1])

    def test_series_validation(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            MultiOutputSeries([[0.0, 0.0]], [[1.0, 2.0]])
        with pytest.raises(ValueError):
            MultiOutputSeries([[0.0, 1.0]], [[1.0, np.nan]])

    def test_bad_index(self):
        cfg = LFMConfig([[1.0, 1.0]], [1.0], [1.0, 1.0], [0, 0])
        with pytest.raises(IndexError):
            output_cross_cov(cfg, 0, 2, 0.0, 0.0)
        with pytest.raises(IndexError):
            lf_output_cross_cov(cfg, 1, 0, 0.0, 0.0)


class TestCovariances:
    def test_lf_auto(self):
        cfg = LFMConfig([[1.0]], [2.0], [1.0], [0.0])
        assert lf_auto_cov(cfg, 0, 3.0, 3.0) == 1.0
        assert lf_auto_cov(cfg, 0, 0.0, 2.0) == pytest.approx(np.exp(-0.5))
        assert lf_auto_cov(cfg, 0, 0.0, 1.3) == lf_auto_cov(cfg, 0, 1.3, 0.0)

    def test_zero_lag_formula(self):
        ell, nu = 1.7, 0.6
        cfg = LFMConfig([[1.0]], [ell], [nu], [0.0])
        expect = 2 * np.pi * ell * nu**2 / np.sqrt(ell**2 + 2 * nu**2)
        assert output_cross_cov(cfg, 0, 0, 2.0, 2.0) == pytest.approx(expect, rel=1e-14)

    def test_decay(self):
        cfg = LFMConfig([[1.0, 0.5]], [1.0], [0.5, 0.5], [0.3, 0.2])
        assert output_cross_cov(cfg, 0, 1, 0.0, 100.0) == 0.0
        assert output_cross_cov(cfg, 1, 1, 0.0, 100.0) == 0.0
        assert output_cross_cov(cfg, 1, 1, 5.0, 5.0) == pytest.approx(
            output_cross_cov(cfg, 1, 1, 5.0, 5.0, noise=False) + 0.04)

    def test_lf_output_zero_lag_max_and_zero_sensitivity(self):
        cfg = LFMConfig([[1.0, 0.0]], [1.0], [0.5, 0.5], [0, 0])
        lags = np.linspace(-3, 3, 61)
        v = lf_output_cross_cov(cfg, 0, 0, 0.0, lags)
        assert np.argmax(v) == 30
        np.testing.assert_array_equal(lf_output_cross_cov(cfg, 0, 1, 0.0, lags), 0.0)

    def test_quadrature_output_cov(self):
        rng = np.random.default_rng(0)
        for _ in range(15):
            ell, nu_p, nu_q = rng.uniform(0.2, 3, 3)
            t, tp = rng.uniform(-2, 2, 2)
            cfg = LFMConfig([[1.0, 1.0]], [ell], [nu_p, nu_q], [0, 0])
            ref = quad_output_cov(ell, nu_p, nu_q, t, tp)
            assert output_cross_cov(cfg, 0, 1, t, tp) == pytest.approx(ref, rel=1e-6)

    def test_quadrature_lf_output_cov(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            ell, nu = rng.uniform(0.2, 3, 2)
            t, tp = rng.uniform(-2, 2, 2)
            s = rng.normal()
            cfg = LFMConfig([[s]], [ell], [nu], [0])
            ref = s * quad_lf_output_cov(ell, nu, t, tp)
            assert lf_output_cross_cov(cfg, 0, 0, t, tp) == pytest.approx(ref, rel=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            cfg = random_config(rng, 2, 3)
            p, q = rng.integers(0, 3, 2)
            t, tp = rng.uniform(-3, 3, 2)
            assert output_cross_cov(cfg, p, q, t, tp) == output_cross_cov(cfg, q, p, tp, t)


class TestJointGram:
    def test_single_output_is_se(self):
        ell, nu, s = 1.2, 0.4, 0.8
        cfg = LFMConfig([[s]], [ell], [nu], [0.1])
        t = np.linspace(0, 5, 12)
        K = build_joint_gram(cfg, [t], noise=False)
        w = np.sqrt(ell**2 + 2 * nu**2)
        amp = s**2 * 2 * np.pi * ell * nu**2 / w
        ref = amp * np.exp(-0.5 * (t[:, None] - t[None, :]) ** 2 / w**2)
        np.testing.assert_allclose(K, ref, rtol=1e-13)
        assert np.min(np.linalg.eigvalsh(build_joint_gram(cfg, [t]))) > 0

    def test_output_permutation(self):
        rng = np.random.default_rng(3)
        cfg = random_config(rng, 2, 2)
        swapped = LFMConfig(cfg.sensitivities[:, ::-1], cfg.lf_lengthscales,
                            cfg.smoothing_widths[::-1], cfg.noise_stds[::-1])
        ta, tb = np.sort(rng.uniform(0, 5, 4)), np.sort(rng.uniform(0, 5, 6))
        K = build_joint_gram(cfg, [ta, tb])
        Ks = build_joint_gram(swapped, [tb, ta])
        perm = np.r_[np.arange(4, 10), np.arange(4)]
        np.testing.assert_allclose(Ks, K[np.ix_(perm, perm)], rtol=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    def test_psd_without_noise(self, seed):
        rng = np.random.default_rng(seed)
        R, Q = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        cfg = random_config(rng, R, Q)
        counts = rng.multinomial(40, np.ones(Q) / Q)
        times = [np.sort(rng.uniform(0, 10, c)) for c in counts]
        ev = np.linalg.eigvalsh(build_joint_gram(cfg, times, noise=False))
        assert ev.min() >= -1e-10 * ev.max()


def two_output_series(seed=0, n=15):
    rng = np.random.default_rng(seed)
    cfg = LFMConfig([[1.0, -0.7]], [1.0], [0.3, 0.5], [0.05, 0.1])
    t = [np.sort(rng.uniform(0, 8, n)), np.sort(rng.uniform(0, 8, n + 3))]
    vals = sample_outputs(cfg, t, rng)
    return cfg, MultiOutputSeries(t, vals)


class TestPrediction:
    def test_reproduces_observations_without_noise(self):
        exact = LFMConfig([[1.0, -0.7]], [0.5], [0.2, 0.3], [0.0, 0.0])
        t = [np.arange(0.0, 8.0, 1.0), np.arange(0.5, 8.0, 1.5)]
        s = MultiOutputSeries(t, [np.sin(t[0]), np.cos(t[1])])
        m = LFMModel.condition(exact, s)
        assert m.factorization.jitter == 0.0
        means, var = predict_outputs(m, s.times)
        for q in range(2):
            np.testing.assert_allclose(means[q], s.values[q], rtol=1e-6, atol=1e-6)
            assert np.all(var[q] < 1e-6)

    def test_far_future_reverts_to_prior(self):
        cfg, s = two_output_series()
        m = LFMModel.condition(cfg, s)
        means, var = predict_outputs(m, [[500.0], [600.0]])
        for q in range(2):
            assert abs(means[q][0]) < 1e-10
            assert var[q][0] == pytest.approx(output_cross_cov(cfg, q, q, 0, 0, noise=False), rel=1e-12)

    def test_dense_conditioning(self):
        cfg, s = two_output_series(1)
        m = LFMModel.condition(cfg, s)
        query = [np.linspace(0, 8, 7), np.linspace(1, 7, 5)]
        mu, cov = predict_joint(m, query)
        idx, tt, y = s.stacked()
        qi = np.r_[np.zeros(7, int), np.ones(5, int)]
        qt = np.concatenate(query)
        k = lambda i1, t1, i2, t2: np.array([[output_cross_cov(cfg, a, b, x, z, noise=False)
                                              for b, z in zip(i2, t2)] for a, x in zip(i1, t1)])
        K = k(idx, tt, idx, tt) + np.diag(cfg.noise_stds[idx] ** 2)
        ref_mu, ref_cov = dense_condition(K, k(qi, qt, idx, tt), k(qi, qt, qi, qt), y)
        np.testing.assert_allclose(mu, ref_mu, atol=1e-8)
        np.testing.assert_allclose(cov, ref_cov, atol=1e-8)
        means, var = predict_outputs(m, query)
        np.testing.assert_allclose(np.concatenate(means), ref_mu, atol=1e-8)
        np.testing.assert_allclose(np.concatenate(var), np.diag(ref_cov), atol=1e-8)

    def test_reduces_to_gp(self):
        ell, nu, s, eta = 1.1, 0.4, 0.9, 0.2
        cfg = LFMConfig([[s]], [ell], [nu], [eta])
        rng = np.random.default_rng(4)
        t = np.sort(rng.uniform(0, 6, 14))
        y = np.sin(t)
        m = LFMModel.condition(cfg, MultiOutputSeries([t], [y]))
        tq = np.linspace(-1, 7, 25)
        means, var = predict_outputs(m, [tq], include_noise=True)
        w = np.sqrt(ell**2 + 2 * nu**2)
        hp = gp.GPHyperparams(w, eta, s**2 * 2 * np.pi * ell * nu**2 / w)
        gmu, gvar = gp.predict(gp.fit(gp.Dataset(t, y), hp), tq[:, None])
        np.testing.assert_allclose(means[0], gmu, atol=1e-8)
        np.testing.assert_allclose(var[0], gvar, atol=1e-8)
        assert m.log_likelihood == pytest.approx(gp.log_marginal_likelihood(gp.Dataset(t, y), hp), abs=1e-8)

    def test_empty_series(self):
        cfg = LFMConfig([[1.0]], [1.0], [0.5], [0.1])
        m = LFMModel.condition(cfg, MultiOutputSeries([[]], [[]]))
        means, var = predict_outputs(m, [[0.0, 1.0]])
        np.testing.assert_array_equal(means[0], 0.0)
        fm, fv = infer_latent_forces(m, [0.0, 1.0])
        np.testing.assert_array_equal(fm, 0.0)
        np.testing.assert_array_equal(fv, 1.0)


class TestLatentForces:
    def test_zero_sensitivity_row_is_prior(self):
        cfg = LFMConfig([[1.0, 0.5], [0.0, 0.0]], [1.0, 2.0], [0.3, 0.3], [0.1, 0.1])
        _, s = two_output_series(2)
        fm, fv = infer_latent_forces(LFMModel.condition(cfg, s), np.linspace(0, 8, 9))
        np.testing.assert_array_equal(fm[1], 0.0)
        np.testing.assert_array_equal(fv[1], 1.0)
        assert np.all(fv[0] <= 1.0)

    def test_dense_single_output(self):
        ell, nu, s, eta = 1.3, 0.5, 1.2, 0.1
        cfg = LFMConfig([[s]], [ell], [nu], [eta])
        rng = np.random.default_rng(5)
        t = np.sort(rng.uniform(0, 6, 10))
        y = np.cos(t)
        fm, fv = infer_latent_forces(LFMModel.condition(cfg, MultiOutputSeries([t], [y])), t)
        K = np.array([[output_cross_cov(cfg, 0, 0, a, b) for b in t] for a in t])
        Kfy = np.array([[s * quad_lf_output_cov(ell, nu, a, b) for b in t] for a in t])
        Kff = np.exp(-0.5 * (t[:, None] - t[None, :]) ** 2 / ell**2)
        ref_mu, ref_cov = dense_condition(K, Kfy, Kff, y)
        np.testing.assert_allclose(fm[0], ref_mu, atol=1e-8)
        np.testing.assert_allclose(fv[0], np.diag(ref_cov), atol=1e-8)


class TestFit:
    def test_empty_series(self):
        with pytest.raises(ValueError):
            fit_lfm(MultiOutputSeries([[], []], [[], []]), 1)

    def test_recovers_generating_likelihood(self):
        cfg, s = two_output_series(6, n=25)
        m = fit_lfm(s, 1, budget=3000, n_starts=3, seed=0)
        assert m.log_likelihood >= log_marginal_likelihood(cfg, s) - 1e-3
        assert m.config.sensitivities[0, 0] >= 0

    def test_nesting(self):
        _, s = two_output_series(7, n=20)
        m1 = fit_lfm(s, 1, budget=1500, seed=1)
        m3 = fit_lfm(s, 3, budget=1500, seed=1, init=[m1.config])
        assert m3.log_likelihood >= m1.log_likelihood
        assert m3.config.R == 3

    def test_deterministic(self):
        _, s = two_output_series(8)
        a = fit_lfm(s, 1, budget=600, seed=3)
        b = fit_lfm(s, 1, budget=600, seed=3)
        assert a.log_likelihood == b.log_likelihood
        np.testing.assert_array_equal(a.config.sensitivities, b.config.sensitivities)

    def test_sign_canonicalization_keeps_likelihood(self):
        cfg, s = two_output_series(9)
        flipped = LFMConfig(-cfg.sensitivities, cfg.lf_lengthscales, cfg.smoothing_widths, cfg.noise_stds)
        canon = canonical_signs(flipped)
        assert canon.sensitivities[0, 0] > 0
        assert log_marginal_likelihood(canon, s) == pytest.approx(log_marginal_likelihood(flipped, s))


class TestMetrics:
    def test_perfect(self):
        assert mse_nmse([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0)

    def test_zero_prediction(self):
        assert mse_nmse([1.0, -2.0], [0.0, 0.0])[1] == pytest.approx(100.0)

    def test_hand_vector(self):
        mse, nmse = mse_nmse([1.0, 2.0], [1.0, 3.0])
        assert mse == pytest.approx(0.5)
        assert nmse == pytest.approx(20.0)

    def test_per_output(self):
        mse, nmse = mse_nmse([[1.0, 2.0], [2.0]], [[1.0, 3.0], [0.0]])
        np.testing.assert_allclose(mse, [0.5, 4.0])
        np.testing.assert_allclose(nmse, [20.0, 100.0])


class TestExponentialRelation:
    @pytest.mark.parametrize("alpha", [-0.4047, -0.4593])
    def test_exact_recovery(self, alpha):
        lai = np.linspace(0.1, 6, 40)
        fapar = 1 - np.exp(alpha * lai)
        assert fit_exponential_relation(lai, fapar) == pytest.approx(alpha, abs=1e-10)

    def test_single_pair(self):
        assert fit_exponential_relation([1.0], [1 - np.exp(-1)]) == pytest.approx(-1.0, abs=1e-14)

    def test_against_lstsq(self):
        rng = np.random.default_rng(10)
        lai = rng.uniform(0, 6, 50)
        fapar = np.clip(1 - np.exp(-0.45 * lai) + 0.02 * rng.normal(size=50), 0, 0.99)
        ref = np.linalg.lstsq(lai[:, None], np.log(1 - fapar), rcond=None)[0][0]
        assert fit_exponential_relation(lai, fapar) == pytest.approx(ref, abs=1e-10)

    def test_rejects_saturated(self):
        with pytest.raises(ValueError):
            fit_exponential_relation([1.0, 2.0], [0.5, 1.0])
