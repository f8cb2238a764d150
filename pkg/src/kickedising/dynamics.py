"""ETH matrix elements, spin autocorrelation and OTOC for Floquet chains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, ResourceLimitError
from .model import ChainParams, FloquetOperator, build_dense_unitary, make_rng, site_signs
from .spectral import EigenpairSet, Operator, residue

SPIN_HALF = 0.5  # S^z = sigma^z / 2
OTOC_DENSE_MAX_L = 12


def eth_site(L: int) -> int:
    """Central site: L/2 for even L, (L+1)/2 for odd L (1-based)."""
    return L // 2 if L % 2 == 0 else (L + 1) // 2


def _num_sites(dim: int) -> int:
    L = dim.bit_length() - 1
    if dim != 1 << L:
        raise InvalidParameterError(f"dimension {dim} is not a power of 2")
    return L


def observable_matrix(eigs: EigenpairSet, site: int, scale: float = 1.0) -> np.ndarray:
    """``<n| scale * sigma^z_site |m>`` over the eigenvectors of ``eigs``."""
    v = eigs.vectors
    s = site_signs(_num_sites(v.shape[0]), site) * scale
    return v.conj().T @ (s[:, None] * v)


def observable_elements(eigs: EigenpairSet, site: int, scale: float = 1.0):
    """Diagonal (in the set's phase order) and off-diagonal magnitudes ``m < n``."""
    o = observable_matrix(eigs, site, scale)
    iu = np.triu_indices(o.shape[0], 1)
    return o.diagonal().real.copy(), np.abs(o[iu])


def diagonal_gap_stats(diag) -> tuple[float, float]:
    """Mean and maximum of |O_{n+1} - O_n| over consecutive eigenstates."""
    d = np.asarray(diag, dtype=float)
    if d.size < 2:
        raise InvalidParameterError("need at least 2 diagonal elements")
    gaps = np.abs(np.diff(d))
    return float(gaps.mean()), float(gaps.max())


def offdiag_fluctuation(magnitudes) -> float:
    m = np.asarray(magnitudes, dtype=float)
    if m.size == 0:
        raise InvalidParameterError("need at least one off-diagonal pair")
    return float(np.sqrt(np.mean(m**2)))


@dataclass
class EthRecord:
    L: int
    site: int
    phases: np.ndarray
    diagonal: np.ndarray
    gaps: np.ndarray
    mean_gap: float
    max_gap: float
    offdiag_rms: float


def eth_record(eigs: EigenpairSet, site: int | None = None, scale: float = SPIN_HALF) -> EthRecord:
    """ETH diagnostics for one window of eigenstates (default observable S^z)."""
    L = _num_sites(eigs.vectors.shape[0])
    site = eth_site(L) if site is None else site
    diag, off = observable_elements(eigs, site, scale)
    mean_gap, max_gap = diagonal_gap_stats(diag)
    return EthRecord(L=L, site=site, phases=eigs.phases.copy(), diagonal=diag,
                     gaps=np.abs(np.diff(diag)), mean_gap=mean_gap, max_gap=max_gap,
                     offdiag_rms=offdiag_fluctuation(off))


@dataclass
class CorrelationSeries:
    times: np.ndarray
    values: np.ndarray
    count: int = 1
    stderr: np.ndarray | None = field(default=None)

    @classmethod
    def average(cls, series: list["CorrelationSeries"], absolute: bool = False):
        """Ensemble mean (optionally of magnitudes) with standard errors."""
        vals = np.array([np.abs(s.values) if absolute else s.values for s in series])
        n = len(series)
        err = vals.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(vals.shape[1])
        return cls(times=series[0].times.copy(), values=vals.mean(axis=0), count=n,
                   stderr=np.abs(err))


def autocorrelation_operator(apply_u: Operator, L: int, phase: float, vector: np.ndarray,
                             t_max: int, site: int | None = None,
                             residue_tol: float = 1e-10) -> CorrelationSeries:
    """C(t) = exp(-i phi t) <psi| s U^t s |psi> for an eigenstate ``psi``.

    ``s`` is sigma^z on ``site`` (default: the last site). Only repeated
    applications of U are used.
    """
    site = L if site is None else site
    psi = np.asarray(vector, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    r = residue(apply_u, psi, phase)
    if r > residue_tol:
        raise InvalidInputError(f"state is not an eigenstate (residue {r:.3e} > {residue_tol:g})")
    w0 = site_signs(L, site) * psi
    w = w0
    out = np.empty(t_max + 1, dtype=complex)
    out[0] = 1.0
    step = np.exp(-1j * phase)
    for t in range(1, t_max + 1):
        w = step * apply_u(w)
        out[t] = np.vdot(w0, w)
    return CorrelationSeries(times=np.arange(t_max + 1), values=out)


def autocorrelation(params: ChainParams, eigenstate: tuple[float, np.ndarray], t_max: int,
                    site: int | None = None, residue_tol: float = 1e-10) -> CorrelationSeries:
    phase, vector = eigenstate
    op = FloquetOperator(params)
    return autocorrelation_operator(op.apply, params.L, phase, vector, t_max, site, residue_tol)


def autocorrelation_spectral(eigs: EigenpairSet, index: int, t_max: int,
                             site: int | None = None) -> CorrelationSeries:
    """Same correlator from a complete eigendecomposition.

    C(t) = sum_k |<k|s|psi>|^2 exp(i (phi_k - phi) t).
    """
    L = _num_sites(eigs.vectors.shape[0])
    site = L if site is None else site
    psi = eigs.vectors[:, index]
    weights = np.abs(eigs.vectors.conj().T @ (site_signs(L, site) * psi)) ** 2
    t = np.arange(t_max + 1)
    dphi = eigs.phases - eigs.phases[index]
    return CorrelationSeries(times=t, values=np.exp(1j * np.outer(t, dphi)) @ weights)


def plateau_value(series: CorrelationSeries, window=(50, 100)) -> tuple[float, float]:
    """Mean and temporal standard deviation of ``series`` inside ``window``."""
    m = (series.times >= window[0]) & (series.times <= window[1])
    v = np.real(series.values[m])
    return float(v.mean()), float(v.std())


def early_decay_fit(series: CorrelationSeries, window=(50, 100), band: float = 3.0):
    """Log-linear fit of the decay before the curve enters its plateau band.

    The decay region runs from t = 0 to the first time the (real, positive)
    curve drops below ``plateau + band * temporal std``. Returns a dict with
    ``slope``, ``intercept``, ``r2`` and ``t_end``.
    """
    mean, sd = plateau_value(series, window)
    v = np.real(series.values)
    below = np.flatnonzero((series.times > 0) & (v <= mean + band * sd))
    t_end = int(series.times[below[0]]) if below.size else int(series.times[-1])
    m = series.times <= t_end
    x, y = series.times[m].astype(float), np.log(v[m])
    slope, intercept = np.polyfit(x, y, 1)
    ss_tot = np.sum((y - y.mean()) ** 2)
    ss_res = np.sum((y - (intercept + slope * x)) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": float(r2),
            "t_end": t_end, "points": int(m.sum())}


def otoc_dense(u: np.ndarray, L: int, t_max: int, site: int | None = None) -> CorrelationSeries:
    """Infinite-temperature squared commutator ||[O(t), O]||_F^2 / 2**L.

    ``O = sigma^z_site`` (default L/2), ``O(t) = U^-t O U^t`` by repeated
    conjugation. Since O is diagonal, ``[A, O]_{ij} = A_ij (s_j - s_i)``.
    """
    site = max(L // 2, 1) if site is None else site
    s = site_signs(L, site)
    ds2 = (s[None, :] - s[:, None]) ** 2
    a = np.diag(s).astype(complex)
    ud = u.conj().T
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        if t:
            a = ud @ a @ u
        out[t] = float(np.sum(np.abs(a) ** 2 * ds2)) / s.size
    return CorrelationSeries(times=np.arange(t_max + 1), values=out)


def otoc_stochastic(apply_u: Operator, apply_u_inv: Operator, L: int, t_max: int,
                    site: int | None = None, n_vectors: int = 8, seed=0) -> CorrelationSeries:
    """Random-vector estimate of the same OTOC, E ||[O(t), O] r||^2 over unit r."""
    site = max(L // 2, 1) if site is None else site
    s = site_signs(L, site)
    rng = make_rng(seed)
    dim = 1 << L
    acc = np.zeros(t_max + 1)
    for _ in range(n_vectors):
        r = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        r /= np.linalg.norm(r)
        fwd_r, fwd_or = r.copy(), s * r
        for t in range(t_max + 1):
            if t:
                fwd_r, fwd_or = apply_u(fwd_r), apply_u(fwd_or)
            x, y = s * fwd_or, s * fwd_r
            for _ in range(t):
                x, y = apply_u_inv(x), apply_u_inv(y)
            acc[t] += np.linalg.norm(x - s * y) ** 2
    return CorrelationSeries(times=np.arange(t_max + 1), values=acc / n_vectors)


def otoc(params: ChainParams, t_max: int, site: int | None = None, stochastic: bool = False,
         n_vectors: int = 8, seed=0) -> CorrelationSeries:
    """OTOC of sigma^z at the chain center for one kicked Ising realization."""
    if stochastic:
        op = FloquetOperator(params)
        return otoc_stochastic(op.apply, op.apply_inverse, params.L, t_max, site, n_vectors, seed)
    if params.L > OTOC_DENSE_MAX_L:
        raise ResourceLimitError(
            f"dense OTOC limited to L<={OTOC_DENSE_MAX_L}; use stochastic=True")
    return otoc_dense(build_dense_unitary(params), params.L, t_max, site)
