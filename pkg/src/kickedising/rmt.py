"""Real (beta = 1) Wishart references for half-chain reduced density matrices.

Square case only: ``W = G G^T`` with ``G`` a ``D x D`` standard Gaussian
matrix, normalized to unit trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, InvalidParameterError
from .model import make_rng


@dataclass(frozen=True)
class TwReference:
    """Tracy-Widom (beta = 1) moments used as the asymptotic target."""

    mean: float = -1.207
    variance: float = 1.608
    skewness: float = 0.293

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


TW1 = TwReference()


@dataclass
class WishartSample:
    dim: int
    eigenvalues: np.ndarray  # descending, unit sum


def _check_dim(D):
    if D < 2:
        raise InvalidParameterError(f"need D >= 2, got {D}")


def sample_wishart_unit_trace(D: int, seed) -> WishartSample:
    """Full spectrum of one unit-trace real Wishart matrix."""
    _check_dim(D)
    g = make_rng(seed).standard_normal((D, D))
    w = g @ g.T
    lam = np.linalg.eigvalsh(w)[::-1] / np.trace(w)
    return WishartSample(dim=D, eigenvalues=np.clip(lam, 0.0, None))


def wishart_lambda_max(D: int, draws: int, seed) -> np.ndarray:
    """Largest eigenvalue of ``draws`` dense unit-trace Wishart matrices.

    Only the top eigenvalue is extracted (LAPACK ``syevr`` with an index
    subset); draws come sequentially from one generator.
    """
    _check_dim(D)
    rng = make_rng(seed)
    out = np.empty(draws)
    for k in range(draws):
        g = rng.standard_normal((D, D))
        w = g @ g.T
        top = scipy.linalg.eigh(w, eigvals_only=True, subset_by_index=[D - 1, D - 1],
                                driver="evr", check_finite=False)
        out[k] = top[0] / np.trace(w)
    return out


def mp_density(e):
    """Marchenko-Pastur density of rescaled eigenvalues ``D * lambda``.

    Zero outside (0, 4]; ``e = 0`` is the integrable singularity and is
    reported as 0.
    """
    e = np.asarray(e, dtype=float)
    inside = (e > 0) & (e <= 4)
    safe = np.where(inside, e, 1.0)
    out = np.where(inside, np.sqrt(np.clip(4 - safe, 0, None) / safe) / (2 * np.pi), 0.0)
    return out if out.ndim else float(out)


def mp_cdf(e):
    """Closed-form CDF of :func:`mp_density` (substitution e = 4 sin^2 t)."""
    e = np.clip(np.asarray(e, dtype=float), 0.0, 4.0)
    t = np.arcsin(np.sqrt(e) / 2)
    return (2 * t + np.sin(2 * t)) / np.pi


def centering_constants(D: int) -> tuple[float, float]:
    """Centering ``mu_W`` and scale ``sigma_W`` for the unit-trace largest eigenvalue."""
    _check_dim(D)
    a = math.sqrt(D - 1) + math.sqrt(D)
    mu = a * a / D**2
    sigma = a * (1 / math.sqrt(D) + 1 / math.sqrt(D - 1)) ** (1 / 3) / D**2
    return mu, sigma


def rescale_lambda_max(lmax, D: int):
    mu, sigma = centering_constants(D)
    return (np.asarray(lmax) - mu) / sigma


@dataclass
class LaguerreTridiagonal:
    """Symmetric tridiagonal matrix stored as its diagonal and off-diagonal."""

    diagonal: np.ndarray
    offdiagonal: np.ndarray

    @property
    def dim(self) -> int:
        return self.diagonal.size

    def trace(self) -> float:
        return float(self.diagonal.sum())

    def matvec(self, x):
        y = self.diagonal * x
        y[:-1] += self.offdiagonal * x[1:]
        y[1:] += self.offdiagonal * x[:-1]
        return y

    def to_dense(self) -> np.ndarray:
        return (np.diag(self.diagonal) + np.diag(self.offdiagonal, 1)
                + np.diag(self.offdiagonal, -1))


def laguerre_tridiagonal(D: int, seed) -> LaguerreTridiagonal:
    """Dumitriu-Edelman tridiagonal model with the eigenvalue law of ``G G^T``.

    ``T = B B^T`` for lower-bidiagonal ``B`` with diagonal chi_D, ..., chi_1 and
    subdiagonal chi_{D-1}, ..., chi_1 (beta = 1, square ``D x D`` ``G``).
    """
    _check_dim(D)
    rng = make_rng(seed)
    x2 = rng.chisquare(np.arange(D, 0, -1, dtype=float))
    y2 = rng.chisquare(np.arange(D - 1, 0, -1, dtype=float))
    diag = x2.copy()
    diag[1:] += y2
    off = np.sqrt(x2[:-1] * y2)
    return LaguerreTridiagonal(diagonal=diag, offdiagonal=off)


def _count_above(t: LaguerreTridiagonal, x: float) -> int:
    d, e = t.diagonal, t.offdiagonal
    hi = float(np.max(d + np.abs(np.r_[e, 0.0]) + np.abs(np.r_[0.0, e]))) + 1.0
    if x >= hi:
        return 0
    w = scipy.linalg.eigvalsh_tridiagonal(d, e, select="v", select_range=(x, hi),
                                          check_finite=False)
    return w.size


def largest_eig_tridiag(t: LaguerreTridiagonal, trace_normalize: bool = False,
                        tol: float = 1e-10, max_iter: int | None = None,
                        verify: bool = True) -> float:
    """Largest eigenvalue by Lanczos started from ``e_1``.

    For a tridiagonal matrix the Krylov space ``K_k(T, e_1)`` is spanned by
    ``e_1 .. e_k`` and the Lanczos matrix is the leading ``k x k`` block, so
    each Lanczos step costs O(1). ``k`` is doubled until the Ritz residual
    ``|T_{k,k+1} y_k|`` falls below ``tol * theta``. With ``verify`` a Sturm
    count confirms no eigenvalue lies above the converged Ritz value, which
    guards against a start vector orthogonal to the top eigenvector.
    """
    d, e = t.diagonal, t.offdiagonal
    n = d.size
    max_iter = 10 * n if max_iter is None else max_iter
    k = min(n, 64, max_iter)
    while True:
        w, v = scipy.linalg.eigh_tridiagonal(d[:k], e[: k - 1], select="i",
                                             select_range=(k - 1, k - 1), check_finite=False)
        theta = float(w[0])
        resid = 0.0 if k == n else abs(e[k - 1] * v[-1, 0])
        if resid <= tol * max(abs(theta), np.finfo(float).tiny):
            break
        if k >= min(n, max_iter):
            best = theta / t.trace() if trace_normalize else theta
            raise ConvergenceError(f"Lanczos residual {resid:.3e} after {k} steps", best=best)
        k = min(n, 2 * k, max_iter)
    if verify and k < n and _count_above(t, theta + resid + tol * abs(theta)) > 0:
        theta = float(scipy.linalg.eigvalsh_tridiagonal(
            d, e, select="i", select_range=(n - 1, n - 1), check_finite=False)[0])
    return theta / t.trace() if trace_normalize else theta


def tridiagonal_lambda_max(D: int, draws: int, seed) -> np.ndarray:
    """Unit-trace largest eigenvalue of ``draws`` Laguerre tridiagonal samples."""
    ss = np.random.SeedSequence(int(seed))
    out = np.empty(draws)
    for k, child in enumerate(ss.spawn(draws)):
        out[k] = largest_eig_tridiag(laguerre_tridiagonal(D, child), trace_normalize=True)
    return out
