import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kickedising.entanglement import (
    SchmidtSpectrum, coefficient_matrix, lambda_max, reduced_density_spectrum, rescaled_spectrum,
    schmidt_spectra, schmidt_spectrum,
)
from kickedising.errors import InvalidParameterError


def rand_state(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def test_product_state_matrix():
    c = coefficient_matrix(np.array([1, 0, 0, 0], dtype=complex), 2)
    assert np.array_equal(c, [[1, 0], [0, 0]])


def test_bell_state_matrix():
    c = coefficient_matrix(np.array([1, 0, 0, 1]) / np.sqrt(2), 2)
    assert np.allclose(c, np.eye(2) / np.sqrt(2), atol=1e-16)


def test_row_index_is_left_half():
    # |0 1> with site 2 flipped: row 0, column 1
    c = coefficient_matrix(np.array([0, 1, 0, 0], dtype=complex), 2)
    assert c[0, 1] == 1


def test_odd_L_rejected():
    with pytest.raises(InvalidParameterError):
        coefficient_matrix(np.ones(8) / np.sqrt(8), 3)
    with pytest.raises(InvalidParameterError):
        schmidt_spectrum(np.ones(8), 2)


def test_product_and_maximal():
    e0 = np.zeros(16)
    e0[5] = 1
    s = schmidt_spectrum(e0, 4)
    assert np.allclose(s.values, [1, 0, 0, 0], atol=1e-15)
    assert np.allclose(rescaled_spectrum(s), [4, 0, 0, 0], atol=1e-14)
    assert lambda_max(s) == pytest.approx(1.0, abs=1e-15)
    bell = np.eye(4).reshape(-1) / 2  # sum_i |i>|i> / 2
    m = schmidt_spectrum(bell, 4)
    assert np.allclose(m.values, 0.25, atol=1e-15)
    assert np.allclose(m.rescaled(), 1.0, atol=1e-14)
    assert m.lambda_max == pytest.approx(0.25, abs=1e-15)


def test_matches_density_matrix_oracle():
    v = rand_state(256, 3)
    c = v.reshape(16, 16)
    ref = reduced_density_spectrum(c @ c.conj().T)
    assert np.abs(schmidt_spectrum(v, 8).values - ref).max() < 1e-12


def test_batched_matches_single():
    vecs = np.column_stack([rand_state(64, k) for k in range(5)])
    batch = schmidt_spectra(vecs, 6)
    for k in range(5):
        assert np.abs(batch[k] - schmidt_spectrum(vecs[:, k], 6).values).max() < 1e-14


def test_reduced_density_rejects_negative():
    with pytest.raises(InvalidParameterError):
        reduced_density_spectrum(np.diag([1.5, -0.5]))


@settings(max_examples=30, deadline=None)
@given(L=st.sampled_from([2, 4, 6, 8]), seed=st.integers(0, 2**32 - 1))
def test_invariants(L, seed):
    v = rand_state(1 << L, seed)
    assert abs(np.linalg.norm(coefficient_matrix(v, L)) - 1) < 1e-12
    s = schmidt_spectrum(v, L)
    D = 1 << (L // 2)
    assert isinstance(s, SchmidtSpectrum) and s.dim == D
    assert np.all(np.diff(s.values) <= 1e-15) and np.all(s.values >= 0)
    assert abs(rescaled_spectrum(s).sum() - D) < 1e-12
    assert 1 / D - 1e-12 <= lambda_max(s) <= 1 + 1e-12
