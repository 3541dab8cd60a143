import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from physgp.kernels import (
    NotPositiveDefiniteError,
    SEKernel,
    cross_cov,
    cross_cov_gradient,
    factorize,
    gram,
    inverse,
    se_eval,
    se_gradient,
    solve,
)


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestSEKernel:
    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            SEKernel(0.0)
        with pytest.raises(ValueError):
            SEKernel(1.0, -1.0)
        with pytest.raises(ValueError):
            SEKernel(np.inf)

    def test_zero_distance(self):
        assert se_eval(SEKernel(1.0), [0.3, -2.0], [0.3, -2.0]) == 1.0

    def test_unit_lag(self):
        assert se_eval(SEKernel(1.0), 0.0, 1.0) == pytest.approx(0.606530659, abs=1e-9)

    def test_3_4_5(self):
        assert se_eval(SEKernel(5.0), [0, 0], [3, 4]) == pytest.approx(np.exp(-0.5), rel=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            se_eval(SEKernel(1.0), [0, 0], [1, 1, 1])
        with pytest.raises(ValueError):
            se_gradient(SEKernel(1.0), [0], [1, 1])

    @given(arrays(float, 3, elements=st.floats(-5, 5)), arrays(float, 3, elements=st.floats(-5, 5)),
           st.floats(0.1, 10), st.floats(0.1, 10))
    def test_symmetric_and_bounded(self, x, y, ell, s2):
        k = SEKernel(ell, s2)
        a, b = se_eval(k, x, y), se_eval(k, y, x)
        assert a == b
        assert 0 <= a <= s2
        if not np.array_equal(x, y) and np.linalg.norm(x - y) > 1e-6 * ell:
            assert a < s2

    def test_signal_variance_on_diagonal(self):
        k = SEKernel(0.7, 3.2)
        X = np.random.default_rng(0).normal(size=(6, 2))
        np.testing.assert_array_equal(np.diag(cross_cov(k, X)), 3.2)


class TestGradient:
    def test_zero_at_coincidence(self):
        np.testing.assert_array_equal(se_gradient(SEKernel(2.0), [1, 2], [1, 2]), [0, 0])

    def test_scalar_value(self):
        g = se_gradient(SEKernel(1.0), 1.0, 0.0)
        assert g[0] == pytest.approx(-0.60653066, abs=1e-8)

    @pytest.mark.parametrize("d", [1, 2, 3, 5])
    def test_matches_finite_differences(self, d):
        rng = np.random.default_rng(d)
        for _ in range(30):
            k = SEKernel(rng.uniform(0.3, 3), rng.uniform(0.5, 2))
            y, yp = rng.normal(size=d), rng.normal(size=d)
            fd = central_diff(lambda z: se_eval(k, z, yp), y)
            assert np.max(np.abs(se_gradient(k, y, yp) - fd)) < 1e-6

    def test_batched_gradient_matches_pairwise(self):
        rng = np.random.default_rng(1)
        k = SEKernel(0.8, 1.7)
        Y, N = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        G = cross_cov_gradient(k, Y, N)
        assert G.shape == (4, 5, 3)
        for i in range(4):
            for j in range(5):
                np.testing.assert_allclose(G[i, j], se_gradient(k, Y[i], N[j]), atol=1e-15)


class TestGram:
    def test_single_point(self):
        np.testing.assert_allclose(gram(SEKernel(1.0), [[0.0]], 0.1), [[1.1]])

    def test_duplicate_rows_singular(self):
        X = np.array([[0.0], [1.0], [1.0]])
        K = gram(SEKernel(1.0), X)
        with pytest.raises(NotPositiveDefiniteError):
            factorize(K, jitter_schedule=(0.0,))

    def test_positive_with_noise(self):
        X = np.random.default_rng(2).normal(size=(20, 3))
        K = gram(SEKernel(1.3), X, 1e-6)
        assert np.min(np.linalg.eigvalsh(K)) > 0
        assert factorize(K).jitter == 0.0

    def test_negative_noise(self):
        with pytest.raises(ValueError):
            gram(SEKernel(1.0), [[0.0]], -1.0)


class TestFactorize:
    def test_identity(self):
        F = factorize(np.eye(3))
        np.testing.assert_array_equal(F.lower, np.eye(3))
        assert F.dimension == 3
        assert F.jitter == 0.0

    def test_two_by_two(self):
        M = np.array([[2.0, 1.0], [1.0, 2.0]])
        F = factorize(M)
        assert np.linalg.norm(F.reconstruct() - M) < 1e-12
        assert F.logdet() == pytest.approx(np.log(3.0), rel=1e-14)

    def test_reconstruction_relative_error(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(12, 12))
        M = A @ A.T + 12 * np.eye(12)
        F = factorize(M)
        assert np.linalg.norm(F.reconstruct() - M) / np.linalg.norm(M) < 1e-10

    def test_duplicates_need_jitter(self):
        X = np.array([[0.0], [0.5], [0.5], [2.0]])
        K = gram(SEKernel(1.0), X)
        F = factorize(K)
        assert F.jitter > 0
        # the reported jitter is the one on the ladder that worked
        assert F.jitter in [r * np.mean(np.diag(K)) for r in (1e-10, 1e-8, 1e-6)]

    def test_failure_names_pivot(self):
        M = np.diag([1.0, 1.0, -5.0, 1.0])
        with pytest.raises(NotPositiveDefiniteError) as info:
            factorize(M)
        assert info.value.pivot == 2

    def test_rejects_non_square_and_nonfinite(self):
        with pytest.raises(ValueError):
            factorize(np.ones((2, 3)))
        with pytest.raises(ValueError):
            factorize(np.array([[1.0, np.nan], [np.nan, 1.0]]))


class TestSolve:
    def test_identity(self):
        B = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(solve(factorize(np.eye(3)), B), B)

    def test_zero_rhs(self):
        M = np.array([[3.0, 1.0], [1.0, 2.0]])
        np.testing.assert_array_equal(solve(factorize(M), np.zeros(2)), 0.0)

    def test_against_dense_inverse(self):
        rng = np.random.default_rng(4)
        A = rng.normal(size=(10, 10))
        M = A @ A.T + np.eye(10)
        B = rng.normal(size=(10, 3))
        X = solve(factorize(M), B)
        np.testing.assert_allclose(X, np.linalg.inv(M) @ B, rtol=0, atol=1e-8)
        assert np.linalg.norm(M @ X - B) / np.linalg.norm(B) < 1e-8
        np.testing.assert_allclose(inverse(factorize(M)), np.linalg.inv(M), atol=1e-8)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            solve(factorize(np.eye(3)), np.ones(4))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_gradient_property(d, seed):
    rng = np.random.default_rng(seed)
    k = SEKernel(rng.uniform(0.2, 4), rng.uniform(0.1, 3))
    y, yp = rng.normal(size=d), rng.normal(size=d)
    fd = central_diff(lambda z: se_eval(k, z, yp), y)
    assert np.max(np.abs(se_gradient(k, y, yp) - fd)) < 1e-6
