import numpy as np
import pytest

from physgp import gp
from physgp.gp import Dataset
from physgp.jgp import (
    JGPGrid,
    JGPHyperparams,
    TaggedDataset,
    fit_jgp,
    loo_moments,
    loo_pseudo_likelihood,
    loo_pseudo_likelihood_naive,
    noise_weights,
    optimize_jgp,
    predict_jgp,
)


def tagged(n_real, n_sim, d=1, seed=0, sim_noise=0.05, shuffle=True):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, size=(n_real + n_sim, d))
    f = np.sin(2 * X).sum(axis=1)
    y = f + 0.1 * rng.normal(size=X.shape[0])
    y[n_real:] = f[n_real:] + sim_noise * rng.normal(size=n_sim)
    flags = np.r_[np.ones(n_real, bool), np.zeros(n_sim, bool)]
    if shuffle:
        p = rng.permutation(X.shape[0])
        X, y, flags = X[p], y[p], flags[p]
    return TaggedDataset(X, y, flags)


class TestTaggedDataset:
    def test_string_tags(self):
        d = TaggedDataset([[0.0], [1.0]], [1, 2], ["real", "SIM"])
        np.testing.assert_array_equal(d.is_real, [True, False])

    def test_unknown_tag(self):
        with pytest.raises(ValueError, match="unknown source"):
            TaggedDataset([[0.0], [1.0]], [1, 2], ["real", "field"])

    def test_needs_real_row(self):
        with pytest.raises(ValueError):
            TaggedDataset([[0.0]], [1.0], [False])

    def test_weights(self):
        np.testing.assert_array_equal(noise_weights([True, False, True], 4.0), [1, 0.25, 1])

    def test_bad_gamma(self):
        with pytest.raises(ValueError):
            JGPHyperparams(1.0, 0.1, 0.0)


class TestReduction:
    @pytest.mark.parametrize("seed", range(5))
    def test_gamma_one_is_pooled_gp(self, seed):
        data = tagged(8, 12, d=2, seed=seed)
        hp = JGPHyperparams(0.9, 0.2, 1.0, 1.3)
        probes = np.random.default_rng(100 + seed).uniform(-3, 3, size=(100, 2))
        mj, vj = predict_jgp(fit_jgp(data, hp), probes)
        mg, vg = gp.predict(gp.fit(data.pooled(), hp.base()), probes)
        assert np.max(np.abs(mj - mg)) <= 1e-10
        assert np.max(np.abs(vj - vg)) <= 1e-10

    def test_all_real_any_gamma(self):
        d = tagged(10, 0, seed=1)
        probes = np.linspace(-2, 2, 7)[:, None]
        ref = gp.predict(gp.fit(d.pooled(), gp.GPHyperparams(0.8, 0.1)), probes)
        for g in (1e-3, 1.0, 1e3):
            out = predict_jgp(fit_jgp(d, JGPHyperparams(0.8, 0.1, g)), probes)
            np.testing.assert_allclose(out[0], ref[0], atol=1e-12)
            np.testing.assert_allclose(out[1], ref[1], atol=1e-12)

    def test_large_gamma_trusts_simulation(self):
        X = np.array([[0.0], [0.0], [2.0]])
        d = TaggedDataset(X, [1.0, 3.0, 0.0], [True, False, True])
        m = fit_jgp(d, JGPHyperparams(1.0, 0.5, 1e6))
        mu, var = predict_jgp(m, [[0.0]])
        assert mu[0] == pytest.approx(3.0, abs=1e-3)

    def test_variance_at_sim_point_large_gamma(self):
        d = tagged(5, 5, seed=2, shuffle=False)
        hp = JGPHyperparams(0.7, 0.3, 1e6)
        m = fit_jgp(d, hp)
        xs = d.inputs[5:6]
        _, cov = predict_jgp(m, xs, full_cov=True)
        # latent variance collapses; dense-solve oracle
        C = m.factorization.reconstruct()
        ks = hp.signal_variance * np.exp(-0.5 * ((xs[0, 0] - d.inputs[:, 0]) ** 2) / 0.49)
        dense = hp.signal_variance - ks @ np.linalg.solve(C, ks)
        assert cov[0, 0] == pytest.approx(dense, abs=1e-8)
        assert cov[0, 0] < 0.09 / 1e6 * 1.01


class TestLOO:
    def test_identity_matches_refit_small(self):
        d = tagged(3, 2, seed=3)
        hp = JGPHyperparams(0.8, 0.2, 3.0, 1.1)
        assert loo_pseudo_likelihood(d, hp) == pytest.approx(loo_pseudo_likelihood_naive(d, hp), abs=1e-8)

    @pytest.mark.parametrize("seed", range(6))
    def test_identity_matches_refit(self, seed):
        rng = np.random.default_rng(seed)
        n_real = int(rng.integers(2, 15))
        n_sim = int(rng.integers(0, 15))
        d = tagged(n_real, n_sim, d=int(rng.integers(1, 4)), seed=seed)
        hp = JGPHyperparams(rng.uniform(0.3, 2), rng.uniform(0.05, 0.5), 10 ** rng.uniform(-2, 2),
                            rng.uniform(0.5, 2))
        assert loo_pseudo_likelihood(d, hp) == pytest.approx(loo_pseudo_likelihood_naive(d, hp), abs=1e-8)

    def test_gamma_one_equals_gp_loo(self):
        d = tagged(6, 4, seed=4)
        hp = JGPHyperparams(0.8, 0.2, 1.0)
        # plain GP LOO on the pool, restricted to real rows, by refitting
        total = 0.0
        for i in np.flatnonzero(d.is_real):
            keep = np.arange(d.n) != i
            m = gp.fit(Dataset(d.inputs[keep], d.targets[keep]), hp.base())
            mu, var = gp.predict(m, d.inputs[i : i + 1])
            total += -0.5 * np.log(2 * np.pi * var[0]) - 0.5 * (d.targets[i] - mu[0]) ** 2 / var[0]
        assert loo_pseudo_likelihood(d, hp) == pytest.approx(total, abs=1e-9)

    def test_duplicate_real_point_shrinks_variance(self):
        d = tagged(5, 3, seed=5, shuffle=False)
        hp = JGPHyperparams(0.8, 0.2, 2.0)
        _, var0 = loo_moments(d, hp)
        dup = TaggedDataset(np.vstack([d.inputs, d.inputs[:1]]), np.r_[d.targets, d.targets[0]],
                            np.r_[d.is_real, True])
        mu1, var1 = loo_moments(dup, hp)
        assert var1[0] < var0[0]
        term = lambda mu, v, y: -0.5 * np.log(2 * np.pi * v) - 0.5 * (y - mu) ** 2 / v
        mu0, _ = loo_moments(d, hp)
        assert term(mu1[0], var1[0], d.targets[0]) > term(mu0[0], var0[0], d.targets[0])

    def test_needs_two_real(self):
        d = TaggedDataset([[0.0], [1.0]], [0.0, 1.0], [True, False])
        with pytest.raises(ValueError):
            loo_pseudo_likelihood(d, JGPHyperparams(1.0, 0.1))


class TestMonotoneTrust:
    @pytest.mark.parametrize("probe", [0.3, 0.5, 0.7, 1.3])
    def test_mean_moves_toward_limit(self, probe):
        # a real cluster near x=0 with value 1, a simulated cluster near x=1 with value 2.
        # Inside the simulated cluster the interpolant overshoots the limit on its way,
        # so the probes sit between the clusters or at its outer edge.
        Xr = np.array([-0.3, 0.0, 0.3])
        X = np.r_[Xr, Xr + 1.0][:, None]
        y = np.r_[np.ones(3), 2 * np.ones(3)]
        d = TaggedDataset(X, y, np.r_[np.ones(3, bool), np.zeros(3, bool)])
        mean = lambda g: predict_jgp(fit_jgp(d, JGPHyperparams(0.5, 0.3, g)), [[probe]])[0][0]
        limit = mean(1e12)
        gap = np.abs([mean(g) - limit for g in np.logspace(-3, 6, 30)])
        assert np.all(np.diff(gap) <= 1e-12)


class TestOptimize:
    def test_single_candidate(self):
        d = tagged(6, 6, seed=6)
        g = JGPGrid((0.7,), (0.1,), (10.0,), (1.0,))
        assert optimize_jgp(d, g) == JGPHyperparams(0.7, 0.1, 10.0, 1.0)

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            optimize_jgp(tagged(6, 6), JGPGrid(gammas=()))

    def test_selects_grid_max(self):
        d = tagged(8, 10, seed=7)
        g = JGPGrid((0.4, 0.8), (0.05, 0.2), (0.1, 1.0, 10.0), (1.0,))
        best = optimize_jgp(d, g)
        vals = {JGPHyperparams(l, s, gm, 1.0): loo_pseudo_likelihood_naive(d, JGPHyperparams(l, s, gm, 1.0))
                for l in g.lengthscales for s in g.noise_stds for gm in g.gammas}
        assert vals[best] == pytest.approx(max(vals.values()), abs=1e-8)

    @pytest.mark.parametrize("good", [True, False])
    def test_gamma_tracks_simulator_quality(self, good):
        grid = JGPGrid(gammas=tuple(np.logspace(-3, 3, 7)))
        hits = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            X = rng.uniform(-2, 2, size=(50, 1))
            f = np.sin(2 * X[:, 0])
            y = f + 0.2 * rng.normal(size=50)
            if good:
                y[20:] = f[20:] + 0.01 * rng.normal(size=30)
            else:
                y[20:] = rng.normal(size=30)
            d = TaggedDataset(X, y, np.arange(50) < 20)
            gamma = optimize_jgp(d, grid).gamma
            hits += gamma >= 1 if good else gamma <= 0.1
        assert hits >= 40
