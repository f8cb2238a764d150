import numpy as np
import pytest
from functools import reduce
from hypothesis import given, settings, strategies as st
from scipy.linalg import hadamard

from kickedising.errors import InvalidParameterError, ResourceLimitError
from kickedising.model import (
    ChainParams, FloquetOperator, apply_floquet, build_dense_unitary, derive_seed, fwht_inplace,
    sample_coe, sample_disorder, unitarity_defect,
)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)
I2 = np.eye(2)


def _site_op(op, i, L):
    return reduce(np.kron, [op if k == i else I2 for k in range(L)])


def kron_floquet(p: ChainParams) -> np.ndarray:
    """Independent dense construction from Pauli Kronecker products."""
    L = p.L
    zs = [_site_op(SZ, i, L) for i in range(L)]
    hz = sum(p.J * zs[i] @ zs[(i + 1) % L] for i in range(L)) + sum(p.h[i] * zs[i] for i in range(L))
    kick = np.cos(p.b) * I2 - 1j * np.sin(p.b) * SX  # exp(-i b sigma^x)
    return np.diag(np.exp(-1j * np.diag(hz))) @ reduce(np.kron, [kick] * L)


def rand_state(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


class TestDisorder:
    def test_deterministic(self):
        assert np.array_equal(sample_disorder(4, 7), sample_disorder(4, 7))

    def test_shape(self):
        assert sample_disorder(2, 3).shape == (2,)

    def test_rejects_short_chain(self):
        with pytest.raises(InvalidParameterError):
            sample_disorder(1, 0)

    def test_standard_normal(self):
        pooled = np.concatenate([sample_disorder(10, derive_seed(11, k)) for k in range(10_000)])
        assert pooled.size == 100_000
        assert abs(pooled.mean()) < 0.02
        assert abs(pooled.var() - 1) < 0.02

    def test_params_validation(self):
        with pytest.raises(InvalidParameterError):
            ChainParams(L=3, h=[0.0, 1.0])
        p = ChainParams.random(5, seed=4)
        assert p.h.size == 5 and p.J == p.b == np.pi / 4
        with pytest.raises(ValueError):
            p.h[0] = 1.0


class TestFwht:
    def test_single_qubit(self):
        v = np.array([1.0, 0.0])
        assert np.allclose(fwht_inplace(v), [2**-0.5, 2**-0.5], atol=1e-15)

    def test_two_qubits(self):
        v = np.array([1, 0, 0, 0], dtype=complex)
        assert np.allclose(fwht_inplace(v), [0.5] * 4, atol=1e-15)

    def test_matches_sylvester_matrix(self):
        v = rand_state(32, 1)
        assert np.abs(fwht_inplace(v.copy()) - hadamard(32) @ v / np.sqrt(32)).max() < 1e-14

    def test_rejects_non_power_of_two(self):
        with pytest.raises(InvalidParameterError):
            fwht_inplace(np.ones(6))

    @settings(max_examples=25, deadline=None)
    @given(L=st.integers(1, 11), seed=st.integers(0, 2**32 - 1))
    def test_involution_and_parseval(self, L, seed):
        v = rand_state(1 << L, seed)
        w = fwht_inplace(v.copy())
        assert abs(np.linalg.norm(w) - 1) < 1e-13
        assert np.abs(fwht_inplace(w) - v).max() < 1e-13

    def test_blocked_transform_matches_butterfly(self):
        for L in (2, 5, 8):
            op = FloquetOperator(ChainParams.random(L, 0))
            v = rand_state(1 << L, L)
            assert np.abs(op.walsh_hadamard(v) - fwht_inplace(v.copy())).max() < 1e-14
            block = np.column_stack([rand_state(1 << L, k) for k in range(3)])
            ref = np.column_stack([fwht_inplace(block[:, k].copy()) for k in range(3)])
            assert np.abs(op.walsh_hadamard(block) - ref).max() < 1e-14


class TestFloquet:
    def test_trivial_parameters_identity(self):
        p = ChainParams(L=4, h=np.zeros(4), J=0.0, b=0.0)
        v = rand_state(16, 2)
        assert np.abs(apply_floquet(v, p) - v).max() < 1e-15

    def test_matches_kron_oracle_L6(self):
        p = ChainParams.random(6, seed=12)
        v = rand_state(64, 3)
        assert np.abs(apply_floquet(v, p) - kron_floquet(p) @ v).max() < 1e-12

    def test_dense_build_matches_kron_oracle(self):
        for seed in range(3):
            p = ChainParams(L=5, h=np.random.default_rng(seed).normal(size=5),
                            J=0.3 + seed, b=1.1 - 0.2 * seed)
            assert np.abs(build_dense_unitary(p) - kron_floquet(p)).max() < 1e-12

    def test_norm_preserved_over_many_kicks(self):
        op = FloquetOperator(ChainParams.random(8, seed=5))
        v = rand_state(256, 4)
        for _ in range(1000):
            v = op.apply(v)
        assert abs(np.linalg.norm(v) - 1) < 1e-9

    def test_inverse(self):
        op = FloquetOperator(ChainParams.random(7, seed=9))
        v = rand_state(128, 5)
        assert np.abs(op.apply_inverse(op.apply(v)) - v).max() < 1e-13

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidParameterError):
            apply_floquet(np.ones(8, dtype=complex), ChainParams.random(4, 0))

    def test_hand_evaluated_two_site(self):
        # J=0, b=0: U = diag(exp(-i pi s_1)) = -1 on both site-1 sectors
        u = build_dense_unitary(ChainParams(L=2, h=[np.pi, 0.0], J=0.0, b=0.0))
        assert np.abs(u - np.diag(np.exp(-1j * np.pi * np.array([1, 1, -1, -1])))).max() < 1e-15

    def test_dense_unitary_and_columns(self):
        p = ChainParams.random(8, seed=21)
        u = build_dense_unitary(p)
        assert unitarity_defect(u) < 1e-10
        for j in (0, 17, 255):
            e = np.zeros(256, dtype=complex)
            e[j] = 1
            assert np.abs(u[:, j] - apply_floquet(e, p)).max() < 1e-14

    def test_dense_guard(self):
        with pytest.raises(ResourceLimitError):
            build_dense_unitary(ChainParams.random(15, 0))


class TestCoe:
    def test_symmetric_unitary(self):
        u = sample_coe(64, 3)
        assert np.abs(u - u.T).max() < 1e-12
        assert unitarity_defect(u) < 1e-10

    def test_deterministic(self):
        assert np.array_equal(sample_coe(16, 5), sample_coe(16, 5))

    def test_rejects_tiny(self):
        with pytest.raises(InvalidParameterError):
            sample_coe(1, 0)

    def test_spacing_ratio(self):
        ratios = []
        for k in range(200):
            phi = np.sort(np.angle(np.linalg.eigvals(sample_coe(256, derive_seed(99, k)))))
            s = np.diff(np.r_[phi, phi[0] + 2 * np.pi])
            ratios.append(np.minimum(s[1:], s[:-1]) / np.maximum(s[1:], s[:-1]))
        assert abs(np.mean(ratios) - 0.5307) < 0.01
