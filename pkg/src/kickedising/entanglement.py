"""Half-chain Schmidt spectra of pure states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

CLAMP_TOL = 1e-12


@dataclass
class SchmidtSpectrum:
    dim: int  # subsystem dimension D = 2**(L/2)
    values: np.ndarray  # descending, unit sum

    def rescaled(self) -> np.ndarray:
        return rescaled_spectrum(self)

    @property
    def lambda_max(self) -> float:
        return lambda_max(self)


def _half(state, L):
    if L % 2:
        raise InvalidParameterError(f"Schmidt statistics use even L only, got L={L}")
    if state.shape[0] != 1 << L:
        raise InvalidParameterError(f"state dimension {state.shape[0]} != 2**{L}")
    return 1 << (L // 2)


def coefficient_matrix(state: np.ndarray, L: int) -> np.ndarray:
    """``C[i, j]`` with ``i`` the first L/2 sites and ``j`` the last L/2 sites."""
    D = _half(state, L)
    return np.asarray(state).reshape(D, D)


def schmidt_spectrum(state: np.ndarray, L: int) -> SchmidtSpectrum:
    """Eigenvalues of ``rho_1 = C C^dagger`` as squared singular values of C."""
    c = coefficient_matrix(state, L)
    lam = np.linalg.svd(c, compute_uv=False) ** 2
    lam /= lam.sum()
    return SchmidtSpectrum(dim=c.shape[0], values=lam)


def schmidt_spectra(vectors: np.ndarray, L: int) -> np.ndarray:
    """Schmidt values for each column of ``vectors``, shape ``(k, D)``."""
    D = _half(vectors, L)
    c = np.moveaxis(vectors.reshape(D, D, -1), -1, 0)
    lam = np.linalg.svd(c, compute_uv=False) ** 2
    return lam / lam.sum(axis=1, keepdims=True)


def reduced_density_spectrum(rho: np.ndarray) -> np.ndarray:
    """Descending spectrum of a density matrix, round-off negatives clamped."""
    w = np.linalg.eigvalsh(rho)[::-1]
    if w.min() < -CLAMP_TOL:
        raise InvalidParameterError(f"density matrix has eigenvalue {w.min():.3e} < 0")
    return np.clip(w, 0.0, None)


def rescaled_spectrum(s: SchmidtSpectrum) -> np.ndarray:
    """``D * lambda_j``; sums to D."""
    return s.dim * s.values


def lambda_max(s: SchmidtSpectrum) -> float:
    return float(s.values[0])
