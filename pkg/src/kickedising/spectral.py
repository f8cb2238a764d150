"""Eigenpairs of unitaries near a target eigenphase.

Two routes: full dense diagonalization (small systems, and the oracle for the
other route), and polynomially filtered Arnoldi for interior eigenpairs.
The filter

    g(U) = 1/(kappa+1) * sum_{m=0}^{kappa} exp(-i m phi) U^m

maps eigenphases near ``phi`` to magnitude ~1 and suppresses the rest, so the
dominant Ritz vectors of ``g(U)`` are eigenvectors of ``U`` near ``phi``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, InvalidParameterError
from .model import ChainParams, FloquetOperator, make_rng

log = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]

BREAKDOWN_TOL = 1e-14


def wrap_phase(phi):
    """Map angles into [-pi, pi)."""
    return np.mod(np.asarray(phi) + np.pi, 2 * np.pi) - np.pi


def phase_distance(a, b):
    return np.abs(wrap_phase(np.asarray(a) - b))


@dataclass
class EigenpairSet:
    """Eigenphases sorted ascending, unit eigenvectors as columns, residues."""

    phases: np.ndarray
    vectors: np.ndarray
    residues: np.ndarray
    target_phase: float = np.pi / 2
    complete: bool = True

    def __len__(self):
        return self.phases.size

    def closest(self, count: int, target: float | None = None) -> "EigenpairSet":
        """Subset of the ``count`` pairs nearest to ``target`` (circular distance)."""
        target = self.target_phase if target is None else target
        keep = np.sort(np.argsort(phase_distance(self.phases, target), kind="stable")[:count])
        return replace(self, phases=self.phases[keep], vectors=self.vectors[:, keep],
                       residues=self.residues[keep], target_phase=target,
                       complete=self.complete and keep.size == count)


@dataclass(frozen=True)
class FilterSpec:
    kappa: int
    krylov_dim: int
    target_phase: float = np.pi / 2
    residue_threshold: float = 1e-10

    def __post_init__(self):
        if self.kappa < 0 or self.krylov_dim < 2 or not self.residue_threshold > 0:
            raise InvalidParameterError(f"invalid filter spec {self}")


def default_filter_spec(L: int) -> FilterSpec:
    """Filter order floor(0.8 * 2**(L/2)) and Krylov dimension floor(2**(L/2 + 2))."""
    if L < 8:
        raise InvalidParameterError(f"default filter spec needs L >= 8, got {L}")
    kappa = math.floor(0.8 * 2.0 ** (L / 2))
    return FilterSpec(kappa=kappa, krylov_dim=math.floor(2.0 ** (L / 2 + 2)))


def residue(apply_u: Operator, v: np.ndarray, phase: float) -> float:
    """Euclidean norm of ``U v - exp(i phase) v``."""
    return float(np.linalg.norm(apply_u(v) - np.exp(1j * phase) * v))


def dense_eig(u: np.ndarray, unitarity_tol: float = 1e-10) -> EigenpairSet:
    """All eigenpairs of a dense unitary via the complex Schur form.

    For a normal matrix the Schur form is diagonal, so the Schur vectors are
    an orthonormal eigenbasis even inside degenerate eigenspaces.
    """
    u = np.asarray(u, dtype=complex)
    n = u.shape[0]
    defect = np.abs(u.conj().T @ u - np.eye(n)).max()
    if defect > unitarity_tol:
        raise InvalidInputError(f"matrix is not unitary (max |U'U - I| = {defect:.3e})")
    t, z = scipy.linalg.schur(u, output="complex")
    lam = np.diag(t)
    phases = wrap_phase(np.angle(lam))
    order = np.argsort(phases, kind="stable")
    phases, z = phases[order], z[:, order]
    residues = np.linalg.norm(u @ z - z * np.exp(1j * phases), axis=0)
    return EigenpairSet(phases=phases, vectors=z, residues=residues, target_phase=0.0)


def dense_window_eig(u: np.ndarray, count: int, target: float = np.pi / 2, guard: int | None = None,
                     unitarity_tol: float = 1e-10) -> EigenpairSet:
    """The ``count`` eigenpairs of a dense unitary with phases nearest ``target``.

    The lowest ``count + guard`` eigenvectors of the Hermitian matrix
    ``(U - z)^H (U - z)``, ``z = exp(i target)``, span the eigenvectors of U
    nearest ``z``. Phases ``target +- d`` share one Hermitian eigenvalue, so a
    Rayleigh-Ritz step with U itself (via a Schur form) separates them. The
    ``guard`` outermost pairs absorb a window edge that cuts such a pair.
    Much cheaper than :func:`dense_eig` when ``count << dim``.
    """
    u = np.asarray(u, dtype=complex)
    n = u.shape[0]
    guard = max(8, count // 4) if guard is None else guard
    m = count + guard
    if m >= n:
        return dense_eig(u, unitarity_tol).closest(count, target)
    defect = np.abs(u.conj().T @ u - np.eye(n)).max()
    if defect > unitarity_tol:
        raise InvalidInputError(f"matrix is not unitary (max |U'U - I| = {defect:.3e})")
    a = u - np.exp(1j * target) * np.eye(n)
    _, v = scipy.linalg.eigh(a.conj().T @ a, subset_by_index=[0, m - 1], driver="evr",
                             check_finite=False)
    t, z = scipy.linalg.schur(v.conj().T @ (u @ v), output="complex")
    vecs = v @ z
    vecs /= np.linalg.norm(vecs, axis=0)
    phases = wrap_phase(np.angle(np.einsum("ij,ij->j", vecs.conj(), u @ vecs)))
    order = np.argsort(phases, kind="stable")
    phases, vecs = phases[order], vecs[:, order]
    residues = np.linalg.norm(u @ vecs - vecs * np.exp(1j * phases), axis=0)
    full = EigenpairSet(phases=phases, vectors=vecs, residues=residues, target_phase=target)
    return full.closest(count, target)


def filtered_apply(state: np.ndarray, apply_u: Operator, spec: FilterSpec) -> np.ndarray:
    """Normalized polynomial filter g(U) applied to ``state``.

    kappa applications of U with a running accumulation.
    """
    step = np.exp(-1j * spec.target_phase)
    acc = np.array(state, dtype=complex)
    w = acc
    for _ in range(spec.kappa):
        w = step * apply_u(w)
        acc += w
    acc /= spec.kappa + 1
    return acc


@dataclass
class ArnoldiResult:
    """Krylov basis ``Q`` (dim x k) and square Hessenberg ``H`` (k x k).

    ``Op Q = Q H + next_norm * next_vector e_k^T``; ``breakdown`` is set when
    the Krylov space became invariant before ``krylov_dim`` steps.
    """

    basis: np.ndarray
    hessenberg: np.ndarray
    next_vector: np.ndarray | None
    next_norm: float
    breakdown: bool


def arnoldi(apply_op: Operator, dim: int, krylov_dim: int, start: np.ndarray,
            reorth: bool = True) -> ArnoldiResult:
    """Arnoldi iteration.

    With ``reorth`` each new vector is orthogonalized by two block classical
    Gram-Schmidt passes (CGS2), which keeps ``Q^H Q`` at machine precision;
    without it a single modified Gram-Schmidt sweep is used.
    """
    start = np.asarray(start, dtype=complex)
    nrm = np.linalg.norm(start)
    if abs(nrm - 1) > 1e-10:
        raise InvalidParameterError(f"start vector must have unit norm, got {nrm}")
    if krylov_dim < 1 or krylov_dim > dim:
        raise InvalidParameterError(f"krylov_dim {krylov_dim} not in 1..{dim}")
    # rows of q are basis vectors, contiguous for the projections
    q = np.zeros((krylov_dim + 1, dim), dtype=complex)
    h = np.zeros((krylov_dim + 1, krylov_dim), dtype=complex)
    q[0] = start
    for j in range(krylov_dim):
        w = np.array(apply_op(q[j]), dtype=complex)
        if reorth:
            for _ in range(2):
                c = q[: j + 1].conj() @ w
                h[: j + 1, j] += c
                w -= c @ q[: j + 1]
        else:
            for i in range(j + 1):
                c = np.vdot(q[i], w)
                h[i, j] += c
                w -= c * q[i]
        beta = np.linalg.norm(w)
        h[j + 1, j] = beta
        if beta < BREAKDOWN_TOL:
            k = j + 1
            return ArnoldiResult(q[:k].T.copy(), h[:k, :k].copy(), None, float(beta), True)
        q[j + 1] = w / beta
    k = krylov_dim
    return ArnoldiResult(q[:k].T.copy(), h[:k, :k].copy(), q[k].copy(), float(h[k, k - 1].real), False)


def random_start(dim: int, seed) -> np.ndarray:
    rng = make_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def polfed_operator(apply_u: Operator, dim: int, spec: FilterSpec, count: int | None = None,
                    seed=0) -> EigenpairSet:
    """Interior eigenpairs of a unitary given only its action on vectors.

    Arnoldi on the filtered operator, Ritz vectors from the Hessenberg
    matrix, eigenphases from Rayleigh quotients against U itself. Pairs whose
    residue exceeds ``spec.residue_threshold`` are dropped; the ``count``
    survivors closest to the target phase are returned. ``complete`` is False
    (and a warning is issued) when fewer than ``count`` survive.
    """
    if count is None:
        count = spec.krylov_dim // 2
    if count > spec.krylov_dim // 2:
        raise InvalidParameterError(f"count {count} exceeds krylov_dim/2 = {spec.krylov_dim // 2}")
    res = arnoldi(lambda v: filtered_apply(v, apply_u, spec), dim, spec.krylov_dim,
                  random_start(dim, seed))
    theta, y = np.linalg.eig(res.hessenberg)
    vecs = res.basis @ y
    vecs /= np.linalg.norm(vecs, axis=0)
    uv = np.column_stack([apply_u(vecs[:, i]) for i in range(vecs.shape[1])])
    phases = wrap_phase(np.angle(np.einsum("ij,ij->j", vecs.conj(), uv)))
    residues = np.linalg.norm(uv - vecs * np.exp(1j * phases), axis=0)

    good = np.flatnonzero(residues <= spec.residue_threshold)
    good = good[np.argsort(phase_distance(phases[good], spec.target_phase), kind="stable")][:count]
    good = good[np.argsort(phases[good], kind="stable")]
    complete = good.size == count
    if not complete:
        msg = (f"only {good.size} of {count} Ritz pairs passed residue threshold "
               f"{spec.residue_threshold:g}")
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return EigenpairSet(phases=phases[good], vectors=vecs[:, good], residues=residues[good],
                        target_phase=spec.target_phase, complete=complete)


def polfed(params: ChainParams, spec: FilterSpec | None = None, count: int | None = None,
           seed=None) -> EigenpairSet:
    """Filtered-Arnoldi eigenpairs of the kicked Ising Floquet operator.

    The start vector seed defaults to the realization seed so runs repeat.
    """
    spec = spec or default_filter_spec(params.L)
    op = FloquetOperator(params)
    if seed is None:
        seed = params.seed if params.seed is not None else 0
    return polfed_operator(op.apply, op.dim, spec, count=count, seed=seed)


def match_eigenpairs(approx: EigenpairSet, reference: EigenpairSet):
    """Pair each approximate eigenpair with the nearest reference phase.

    Returns ``(index, phase_error, overlap)`` arrays, where ``overlap`` is
    ``|<v_ref|v>|``.
    """
    d = phase_distance(approx.phases[:, None], reference.phases[None, :])
    idx = np.argmin(d, axis=1)
    err = d[np.arange(idx.size), idx]
    overlap = np.abs(np.einsum("ij,ij->j", reference.vectors[:, idx].conj(), approx.vectors))
    return idx, err, overlap
