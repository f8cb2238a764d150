"""Kicked field Ising Floquet operator and the COE reference ensemble.

Basis convention used everywhere in the package: a basis index is read as an
``L``-bit integer with site 1 on the most significant bit, and bit value 0
means sigma^z = +1 (spin up).

The Floquet operator is ``U = exp(-i H_z) exp(-i H_x)`` with

    H_z = J sum_i s_i s_{i+1} + sum_i h_i s_i      (periodic, site L+1 = site 1)
    H_x = b sum_i sigma^x_i

``H_z`` is diagonal in the computational basis and ``H_x`` is diagonal after a
Walsh-Hadamard transform, so one application costs two transforms and two
elementwise phase multiplications.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import hadamard

from .errors import InvalidParameterError, ResourceLimitError

SELF_DUAL = np.pi / 4
DENSE_MAX_L = 14
RNG_ALGORITHM = "numpy.random.PCG64 seeded by SeedSequence(master, spawn_key=keys)"


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(master: int, *keys: int) -> int:
    """Per-realization 64-bit seed from a master seed.

    Uses ``SeedSequence(master, spawn_key=keys)``, the same construction as
    ``SeedSequence.spawn``, so streams for distinct key tuples are independent.
    ``derive_seed(m, i)`` is the seed of the ``i``-th child of ``m``.
    """
    if not keys:
        raise InvalidParameterError("derive_seed needs at least one key")
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _check_length(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise InvalidParameterError(f"length {n} is not a power of 2")
    return n.bit_length() - 1


@lru_cache(maxsize=32)
def spin_signs(L: int) -> np.ndarray:
    """Array of shape ``(L, 2**L)`` with the sigma^z eigenvalue of each site."""
    idx = np.arange(1 << L)
    signs = np.empty((L, 1 << L), dtype=np.int8)
    for site in range(L):
        signs[site] = 1 - 2 * ((idx >> (L - 1 - site)) & 1)
    signs.setflags(write=False)
    return signs


def site_signs(L: int, site: int) -> np.ndarray:
    """sigma^z eigenvalues (+1/-1, float) of 1-based ``site`` across the basis."""
    if not 1 <= site <= L:
        raise InvalidParameterError(f"site {site} outside 1..{L}")
    return spin_signs(L)[site - 1].astype(float)


def sample_disorder(L: int, seed) -> np.ndarray:
    """i.i.d. standard normal longitudinal fields for ``L`` sites."""
    if L < 2:
        raise InvalidParameterError(f"need L >= 2, got {L}")
    return make_rng(seed).standard_normal(L)


@dataclass(frozen=True)
class ChainParams:
    """One disorder realization of the kicked field Ising chain."""

    L: int
    h: np.ndarray
    J: float = SELF_DUAL
    b: float = SELF_DUAL
    seed: int | None = None

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise InvalidParameterError(f"need integer L >= 2, got {self.L}")
        h = np.array(self.h, dtype=float).reshape(-1)
        if h.size != self.L:
            raise InvalidParameterError(f"h has {h.size} entries, expected {self.L}")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "L", int(self.L))

    @classmethod
    def random(cls, L: int, seed, J: float = SELF_DUAL, b: float = SELF_DUAL) -> "ChainParams":
        return cls(L=L, h=sample_disorder(L, seed), J=J, b=b, seed=int(seed))

    @property
    def dim(self) -> int:
        return 1 << self.L


def fwht_inplace(state: np.ndarray) -> np.ndarray:
    """Orthonormal Walsh-Hadamard transform along axis 0, in place.

    Radix-2 butterflies followed by the ``2**(-L/2)`` normalization, so the
    transform is its own inverse. Returns ``state`` for chaining.
    """
    L = _check_length(state.shape[0])
    rest = state.shape[1:]
    h = 1
    for _ in range(L):
        blocks = state.reshape(-1, 2, h, *rest)
        upper = blocks[:, 0].copy()
        blocks[:, 0] += blocks[:, 1]
        np.subtract(upper, blocks[:, 1], out=blocks[:, 1])
        h *= 2
    state *= 2.0 ** (-L / 2)
    return state


class FloquetOperator:
    """Matrix-free kicked Ising Floquet operator for fixed parameters.

    Instances are immutable; ``apply`` never modifies its argument. Vectors
    may be 1-D of length ``2**L`` or 2-D ``(2**L, k)`` blocks of columns.

    The Walsh-Hadamard transform is evaluated as ``H^{(x)a} (x) H^{(x)b}``
    with two small dense Sylvester blocks, which is the same transform as
    :func:`fwht_inplace` but runs on BLAS.
    """

    def __init__(self, params: ChainParams):
        self.params = params
        L = params.L
        self.L = L
        self.dim = 1 << L
        s = spin_signs(L).astype(float)
        bonds = sum(s[i] * s[(i + 1) % L] for i in range(L))
        hz = params.J * bonds + params.h @ s
        self.phase_z = np.exp(-1j * hz)
        self.phase_x = np.exp(-1j * params.b * s.sum(axis=0))
        hi = L // 2
        lo = L - hi
        self._na, self._nb = 1 << hi, 1 << lo
        self._ha = hadamard(self._na).astype(float) * 2.0 ** (-hi / 2)
        self._hb = hadamard(self._nb).astype(float) * 2.0 ** (-lo / 2)

    def walsh_hadamard(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 1:
            return (self._ha @ x.reshape(self._na, self._nb) @ self._hb).reshape(-1)
        k = x.shape[1]
        y = (self._ha @ x.reshape(self._na, self._nb * k)).reshape(self._na, self._nb, k)
        return np.matmul(self._hb, y).reshape(self.dim, k)

    def _check(self, state):
        if state.shape[0] != self.dim:
            raise InvalidParameterError(
                f"state has dimension {state.shape[0]}, operator acts on {self.dim}")

    def _diag(self, phases, x):
        return phases * x if x.ndim == 1 else phases[:, None] * x

    def apply(self, state: np.ndarray) -> np.ndarray:
        self._check(state)
        w = self.walsh_hadamard(np.asarray(state, dtype=complex))
        w = self.walsh_hadamard(self._diag(self.phase_x, w))
        return self._diag(self.phase_z, w)

    __call__ = apply

    def apply_inverse(self, state: np.ndarray) -> np.ndarray:
        self._check(state)
        w = self._diag(self.phase_z.conj(), np.asarray(state, dtype=complex))
        w = self.walsh_hadamard(self._diag(self.phase_x.conj(), self.walsh_hadamard(w)))
        return w

    def to_dense(self) -> np.ndarray:
        return build_dense_unitary(self.params, operator=self)


def apply_floquet(state: np.ndarray, params: ChainParams) -> np.ndarray:
    """One kick period applied to ``state`` (see :class:`FloquetOperator`)."""
    return FloquetOperator(params).apply(state)


def build_dense_unitary(params: ChainParams, operator: FloquetOperator | None = None) -> np.ndarray:
    """Materialize U column by column from the matrix-free application."""
    if params.L > DENSE_MAX_L:
        raise ResourceLimitError(f"dense unitary for L={params.L} exceeds guard L<={DENSE_MAX_L}")
    op = operator or FloquetOperator(params)
    return op.apply(np.eye(params.dim, dtype=complex))


def unitarity_defect(u: np.ndarray) -> float:
    """max |U^dagger U - I|."""
    return float(np.abs(u.conj().T @ u - np.eye(u.shape[0])).max())


def sample_haar_unitary(dim: int, seed) -> np.ndarray:
    rng = make_rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def sample_coe(dim: int, seed) -> np.ndarray:
    """COE matrix ``W^T W`` with ``W`` Haar-distributed on U(dim)."""
    if dim < 2:
        raise InvalidParameterError(f"need dim >= 2, got {dim}")
    w = sample_haar_unitary(dim, seed)
    return w.T @ w


@dataclass(frozen=True)
class DenseOperator:
    """Callable wrapper so dense matrices plug into matrix-free code paths."""

    matrix: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, state):
        return self.matrix @ state

    __call__ = apply

    def apply_inverse(self, state):
        return self.matrix.conj().T @ state
