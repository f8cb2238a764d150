import numpy as np
import pytest

from kickedising.dynamics import (
    CorrelationSeries, autocorrelation, autocorrelation_spectral, diagonal_gap_stats,
    early_decay_fit, eth_record, eth_site, observable_elements, observable_matrix,
    offdiag_fluctuation, otoc, otoc_dense, otoc_stochastic, plateau_value,
)
from kickedising.errors import InvalidInputError, InvalidParameterError, ResourceLimitError
from kickedising.model import ChainParams, FloquetOperator, build_dense_unitary, site_signs
from kickedising.spectral import EigenpairSet, dense_eig


@pytest.fixture(scope="module")
def l8():
    p = ChainParams.random(8, seed=31)
    return p, dense_eig(build_dense_unitary(p))


def basis_set(L):
    n = 1 << L
    return EigenpairSet(phases=np.zeros(n), vectors=np.eye(n, dtype=complex), residues=np.zeros(n))


class TestEth:
    def test_site(self):
        assert [eth_site(L) for L in (8, 9, 10, 13)] == [4, 5, 5, 7]

    def test_computational_basis(self):
        diag, off = observable_elements(basis_set(4), 2)
        assert np.array_equal(diag, site_signs(4, 2))
        assert np.all(off == 0) and off.size == 16 * 15 // 2

    def test_matrix_properties(self, l8):
        _, e = l8
        o = observable_matrix(e, 4)
        assert np.abs(o - o.conj().T).max() < 1e-13
        # completeness: sum_m |O_nm|^2 = <n|O^2|n> = 1
        assert np.abs(np.sum(np.abs(o) ** 2, axis=1) - 1).max() < 1e-12

    def test_traceless(self, l8):
        _, e = l8
        diag, _ = observable_elements(e, 4)
        assert np.all(np.abs(diag) <= 1 + 1e-12)
        assert abs(diag.mean()) < 3 * diag.std(ddof=1) / np.sqrt(diag.size)
        assert abs(diag.sum()) < 1e-10

    def test_gap_examples(self):
        assert diagonal_gap_stats([0.3, 0.3, 0.3]) == (0.0, 0.0)
        assert diagonal_gap_stats([0, 1, -1]) == (1.5, 2.0)
        with pytest.raises(InvalidParameterError):
            diagonal_gap_stats([1.0])

    def test_offdiag_examples(self):
        assert offdiag_fluctuation(np.zeros(5)) == 0.0
        assert offdiag_fluctuation([0.5]) == 0.5

    def test_record_scale(self, l8):
        _, e = l8
        sub = e.closest(64, np.pi / 2)
        half, full = eth_record(sub), eth_record(sub, scale=1.0)
        assert half.site == 4 and abs(full.mean_gap - 2 * half.mean_gap) < 1e-14
        assert abs(full.offdiag_rms - 2 * half.offdiag_rms) < 1e-14
        assert np.array_equal(half.gaps, np.abs(np.diff(half.diagonal)))


class TestAutocorrelation:
    def test_matrix_free_matches_dense(self, l8):
        p, e = l8
        for idx in (3, 100, 250):
            mf = autocorrelation(p, (e.phases[idx], e.vectors[:, idx]), 100)
            ref = autocorrelation_spectral(e, idx, 100)
            assert mf.values[0] == 1.0
            assert np.abs(mf.values - ref.values).max() < 1e-10

    def test_rejects_non_eigenstate(self, l8):
        p, e = l8
        with pytest.raises(InvalidInputError):
            autocorrelation(p, (e.phases[0] + 0.1, e.vectors[:, 0]), 5)

    def test_average_and_plateau(self):
        t = np.arange(11)
        a = CorrelationSeries(t, np.exp(-t) + 0.1)
        b = CorrelationSeries(t, -(np.exp(-t) + 0.1))
        avg = CorrelationSeries.average([a, b], absolute=True)
        assert np.allclose(avg.values, a.values) and np.all(avg.stderr == 0) and avg.count == 2
        mean, sd = plateau_value(avg, (8, 10))
        assert abs(mean - 0.1) < 1e-3 and sd < 1e-3

    def test_early_decay_synthetic(self):
        t = np.arange(101)
        rng = np.random.default_rng(0)
        v = np.exp(-0.3 * t) + 0.01 + 1e-4 * rng.standard_normal(t.size)
        fit = early_decay_fit(CorrelationSeries(t, v))
        assert fit["slope"] < 0 and fit["r2"] > 0.9 and fit["points"] > 5


class TestOtoc:
    def test_zero_at_start_and_nonnegative(self):
        c = otoc(ChainParams.random(6, seed=1), 10)
        assert c.values[0] == 0.0 and np.all(c.values >= 0)

    def test_commuting_dynamics(self):
        p = ChainParams(L=6, h=np.random.default_rng(0).normal(size=6), J=0.0, b=0.0)
        assert np.abs(otoc(p, 8).values).max() < 1e-24

    def test_bounded_by_four(self):
        c = otoc(ChainParams.random(6, seed=2), 30)
        assert c.values.max() <= 4 + 1e-12

    def test_stochastic_matches_dense(self):
        p = ChainParams.random(8, seed=5)
        op = FloquetOperator(p)
        dense = otoc_dense(build_dense_unitary(p), 8, 6)
        est = otoc_stochastic(op.apply, op.apply_inverse, 8, 6, n_vectors=40, seed=1)
        assert est.values[0] < 1e-24
        assert np.abs(est.values - dense.values).max() < 0.1 * max(dense.values.max(), 1)

    def test_resource_guard(self):
        with pytest.raises(ResourceLimitError):
            otoc(ChainParams.random(13, 0), 2)
