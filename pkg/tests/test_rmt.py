import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, settings, strategies as st

from kickedising.errors import ConvergenceError, InvalidParameterError
from kickedising.model import make_rng
from kickedising.rmt import (
    LaguerreTridiagonal, centering_constants, laguerre_tridiagonal, largest_eig_tridiag, mp_cdf,
    mp_density, rescale_lambda_max, sample_wishart_unit_trace, tridiagonal_lambda_max,
    wishart_lambda_max,
)
from kickedising.stats import histogram_from_masses, kl_divergence, make_histogram, shared_edges


class TestWishart:
    def test_unit_trace(self):
        s = sample_wishart_unit_trace(32, 1)
        assert abs(s.eigenvalues.sum() - 1) < 1e-12
        assert np.all(np.diff(s.eigenvalues) <= 0)

    def test_two_by_two(self):
        for seed in range(20):
            lam = sample_wishart_unit_trace(2, seed).eigenvalues
            assert np.all((lam >= 0) & (lam <= 1))

    def test_trace_moment(self):
        # E[Tr W^2] = 2 D^3 + D^2 for W = G G^T with square real G (D = 8)
        rng = make_rng(5)
        vals = [np.sum((g @ g.T) ** 2) for g in rng.standard_normal((20000, 8, 8))]
        assert abs(np.mean(vals) - (2 * 8**3 + 8**2)) / (2 * 8**3 + 8**2) < 0.02

    def test_top_eigenvalue_matches_full_spectrum(self):
        top = wishart_lambda_max(16, 5, seed=3)
        rng = make_rng(3)
        for k in range(5):
            g = rng.standard_normal((16, 16))
            w = g @ g.T
            assert abs(top[k] - np.linalg.eigvalsh(w)[-1] / np.trace(w)) < 1e-13

    def test_mp_agreement_D64(self):
        D = 64
        e = np.concatenate([D * sample_wishart_unit_trace(D, s).eigenvalues for s in range(1600)])
        edges = np.linspace(0, 4, 101)
        model = make_histogram(e, edges=edges)
        ref = histogram_from_masses(edges, np.diff(mp_cdf(edges)))
        assert kl_divergence(ref, model) < 0.01


class TestMarchenkoPastur:
    def test_values(self):
        assert abs(mp_density(2.0) - 1 / (2 * np.pi)) < 1e-15
        assert mp_density(4.0) == 0.0
        assert mp_density(5.0) == 0.0 and mp_density(-1.0) == 0.0 and mp_density(0.0) == 0.0

    def test_normalization_quadrature(self):
        val, _ = scipy.integrate.quad(mp_density, 0, 4, limit=200)
        assert abs(val - 1) < 1e-6

    def test_cdf_matches_quadrature(self):
        for x in (0.1, 1.0, 2.5, 3.9):
            val, _ = scipy.integrate.quad(mp_density, 0, x, limit=200)
            assert abs(val - mp_cdf(x)) < 1e-8
        assert mp_cdf(0.0) == 0.0 and abs(mp_cdf(4.0) - 1) < 1e-15


class TestCentering:
    def test_small_D(self):
        mu2, _ = centering_constants(2)
        assert abs(mu2 - (1 + math.sqrt(2)) ** 2 / 4) < 1e-15
        assert abs(mu2 - 1.457107) < 1e-6
        mu4, _ = centering_constants(4)
        assert abs(mu4 - (math.sqrt(3) + 2) ** 2 / 16) < 1e-15
        assert abs(mu4 - 0.8705127) < 1e-7

    def test_asymptotics(self):
        D = 2**18
        mu, sigma = centering_constants(D)
        assert abs(mu * D / 4 - 1) < 0.01
        assert abs(sigma * D ** (5 / 3) / 2 ** (4 / 3) - 1) < 0.01

    def test_invalid(self):
        with pytest.raises(InvalidParameterError):
            centering_constants(1)

    def test_rescale_center(self):
        mu, _ = centering_constants(100)
        assert rescale_lambda_max(mu, 100) == 0.0


class TestTridiagonal:
    def test_psd(self):
        for s in range(100):
            t = laguerre_tridiagonal(64, s)
            assert scipy.linalg.eigvalsh_tridiagonal(t.diagonal, t.offdiagonal)[0] > -1e-9

    def test_trace_moment(self):
        tr = np.array([laguerre_tridiagonal(64, s).trace() for s in range(10000)])
        assert abs(tr.mean() / 64 - 64) / 64 < 0.02

    def test_matvec_and_dense(self):
        t = laguerre_tridiagonal(10, 2)
        x = np.arange(10.0)
        assert np.abs(t.matvec(x) - t.to_dense() @ x).max() < 1e-12

    def test_law_matches_dense_wishart(self):
        D = 64
        rng = make_rng(8)
        dense = np.empty(10000)
        for k in range(dense.size):
            g = rng.standard_normal((D, D))
            dense[k] = np.linalg.eigvalsh(g @ g.T)[-1]
        tri = np.array([largest_eig_tridiag(laguerre_tridiagonal(D, np.random.SeedSequence(9, spawn_key=(k,))))
                        for k in range(10000)])
        edges = shared_edges(dense, tri, bins=40)
        assert kl_divergence(make_histogram(dense, edges), make_histogram(tri, edges)) < 0.02

    def test_diagonal_example(self):
        t = LaguerreTridiagonal(np.array([1.0, 2.0, 3.0]), np.zeros(2))
        assert largest_eig_tridiag(t) == 3.0

    def test_decoupled_large_matrix_uses_verification(self):
        d = np.ones(200)
        d[150] = 10.0
        t = LaguerreTridiagonal(d, np.zeros(199))
        assert largest_eig_tridiag(t) == 10.0

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**31), D=st.sampled_from([7, 64, 256]))
    def test_matches_full_solver(self, seed, D):
        t = laguerre_tridiagonal(D, seed)
        full = scipy.linalg.eigvalsh_tridiagonal(t.diagonal, t.offdiagonal)[-1]
        assert abs(largest_eig_tridiag(t) - full) / full < 1e-10
        assert abs(largest_eig_tridiag(t, trace_normalize=True) - full / t.trace()) < 1e-12

    def test_non_convergence(self):
        t = laguerre_tridiagonal(4096, 1)
        with pytest.raises(ConvergenceError) as err:
            largest_eig_tridiag(t, tol=1e-300, max_iter=100)
        assert err.value.best is not None and err.value.best > 0

    def test_sampler_deterministic(self):
        assert np.array_equal(tridiagonal_lambda_max(128, 4, 3), tridiagonal_lambda_max(128, 4, 3))
