"""Histograms, divergences, moments, GEV maximum likelihood and scaling fits.

GEV sign convention: the shape ``xi`` enters as ``(1 - xi*y)``, so ``xi > 0``
is the Weibull class (bounded above), ``xi < 0`` Frechet and ``xi = 0``
Gumbel. This matches ``scipy.stats.genextreme`` with ``c = xi``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.optimize
import scipy.stats

from .errors import ConvergenceError, DegenerateDataError, InvalidParameterError
from .rmt import TW1, TwReference

DEFAULT_BINS = 100
KL_FLOOR = 1e-12
EULER_GAMMA = 0.5772156649015329


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray  # may be fractional when built from reference masses

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def density(self) -> np.ndarray:
        return self.probabilities() / self.widths


def make_histogram(samples, edges=None, bins: int = DEFAULT_BINS, range=None) -> Histogram:
    """Bin ``samples``; default is ``bins`` equal-width bins over the sample range."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise InvalidParameterError("cannot histogram an empty sample")
    if edges is None:
        counts, edges = np.histogram(x, bins=bins, range=range)
    else:
        counts, edges = np.histogram(x, bins=np.asarray(edges, dtype=float))
    return Histogram(edges=edges, counts=counts.astype(float))


def shared_edges(*samples, bins: int = DEFAULT_BINS, range=None) -> np.ndarray:
    """Equal-width edges spanning the pooled range of several samples."""
    if range is None:
        pooled = np.concatenate([np.asarray(s, dtype=float).reshape(-1) for s in samples])
        range = (pooled.min(), pooled.max())
    return np.linspace(range[0], range[1], bins + 1)


def histogram_from_masses(edges, masses) -> Histogram:
    return Histogram(edges=np.asarray(edges, dtype=float), counts=np.asarray(masses, dtype=float))


def kl_divergence(p: Histogram, q: Histogram, floor: float = KL_FLOOR) -> float:
    """sum_x P(x) log(P(x)/Q(x)) over bin probabilities.

    ``P`` is the reference and ``Q`` the model; empty ``Q`` bins are floored at
    ``floor``. Bins with ``P = 0`` contribute nothing.
    """
    if p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
        raise InvalidParameterError("histograms must share identical bin edges")
    pp = p.probabilities()
    qq = np.maximum(q.probabilities(), floor)
    m = pp > 0
    return float(np.sum(pp[m] * np.log(pp[m] / qq[m])))


@dataclass
class MomentSummary:
    mean: float
    variance: float
    skewness: float
    count: int

    def as_dict(self):
        return asdict(self)


def moment_summary(samples) -> MomentSummary:
    """Mean, unbiased variance and (bias-uncorrected) standardized skewness."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 3:
        raise InvalidParameterError(f"need at least 3 samples, got {x.size}")
    return MomentSummary(mean=float(x.mean()), variance=float(x.var(ddof=1)),
                         skewness=float(scipy.stats.skew(x, bias=True)), count=int(x.size))


def ratio_R(model_mean: float, tw: TwReference = TW1) -> float:
    """Distance of a mean from the Tracy-Widom mean in TW standard deviations."""
    return abs(model_mean - tw.mean) / tw.std


@dataclass
class ScalingFit:
    a0: float
    b: float
    a0_err: float
    b_err: float
    L: np.ndarray
    residuals: np.ndarray  # log2 residuals, ordered by L

    def predict(self, L):
        return self.a0 * 2.0 ** (-np.asarray(L, dtype=float) / self.b)

    def as_dict(self):
        return {"a0": self.a0, "b": self.b, "a0_err": self.a0_err, "b_err": self.b_err}


def fit_exponential_scaling(L, values) -> ScalingFit:
    """Least-squares fit of ``log2 v = log2 a0 - L/b``."""
    L = np.asarray(L, dtype=float)
    v = np.asarray(values, dtype=float)
    if L.size != v.size or L.size < 3:
        raise InvalidParameterError("need at least 3 (L, value) points")
    if np.any(v <= 0):
        raise InvalidParameterError("scaling fit needs strictly positive values")
    order = np.argsort(L, kind="stable")
    x, y = L[order], np.log2(v[order])
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    s2 = np.sum(resid**2) / (n - 2) if n > 2 else 0.0
    se_slope = math.sqrt(s2 / sxx)
    se_int = math.sqrt(s2 * (1 / n + xm**2 / sxx))
    if slope >= 0:
        raise InvalidParameterError(f"values do not decay with L (slope {slope:.3g})")
    a0 = 2.0**intercept
    return ScalingFit(a0=float(a0), b=float(-1 / slope), a0_err=float(a0 * math.log(2) * se_int),
                      b_err=float(se_slope / slope**2), L=x, residuals=resid)


# --- generalized extreme value -------------------------------------------------

def gev_logpdf(y, xi: float):
    y = np.asarray(y, dtype=float)
    if xi == 0:
        return -y - np.exp(-y)
    arg = -xi * y
    with np.errstate(invalid="ignore", divide="ignore"):
        log_u = np.log1p(np.where(arg > -1, arg, 0.0))
        out = (1 / xi - 1) * log_u - np.exp(log_u / xi)
    return np.where(arg > -1, out, -np.inf)


def gev_density(y, xi: float):
    """Standardized GEV density; zero outside the support ``1 - xi*y > 0``."""
    out = np.exp(gev_logpdf(y, xi))
    return out if out.ndim else float(out)


def gev_cdf(y, xi: float):
    y = np.asarray(y, dtype=float)
    if xi == 0:
        return np.exp(-np.exp(-y))
    u = 1 - xi * y
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.exp(-np.power(np.clip(u, 0, None), 1 / xi))
    # outside the support the CDF is 1 (Weibull, above the endpoint) or 0 (Frechet)
    return np.where(u > 0, val, 1.0 if xi > 0 else 0.0)


def gev_quantile(p, xi: float):
    p = np.asarray(p, dtype=float)
    t = -np.log(p)
    if xi == 0:
        return -np.log(t)
    return (1 - t**xi) / xi


def sample_gev(n: int, alpha: float, beta: float, xi: float, seed) -> np.ndarray:
    """Inverse-CDF draws of ``alpha + beta * Y`` with ``Y`` standard GEV."""
    u = np.random.default_rng(seed).random(n)
    return alpha + beta * gev_quantile(u, xi)


@dataclass
class GevFit:
    alpha: float
    beta: float
    xi: float
    alpha_err: float
    beta_err: float
    xi_err: float
    log_likelihood: float
    n: int

    def as_dict(self):
        return asdict(self)

    def density(self, x):
        return gev_density((np.asarray(x) - self.alpha) / self.beta, self.xi) / self.beta


def _gev_nll(theta, z):
    alpha, beta, xi = theta
    if beta <= 0:
        return np.inf
    ll = gev_logpdf((z - alpha) / beta, xi)
    if not np.all(np.isfinite(ll)):
        return np.inf
    return z.size * math.log(beta) - float(ll.sum())


def _hessian(f, x, rel=1e-4):
    x = np.asarray(x, dtype=float)
    h = rel * np.maximum(np.abs(x), 1.0)
    k = x.size
    out = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k)
            ej = np.zeros(k)
            ei[i] = h[i]
            ej[j] = h[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
            out[i, j] = out[j, i] = val
    return out


def fit_gev(samples, xi0: float = 0.1, maxiter: int = 20000) -> GevFit:
    """Maximum-likelihood GEV fit by Nelder-Mead on standardized data.

    Starting point: Gumbel moment estimators for location and scale and
    ``xi0`` for the shape. Standard errors come from the inverse of the
    numerically differentiated observed information.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 100:
        raise InvalidParameterError(f"GEV fit needs at least 100 samples, got {x.size}")
    if np.ptp(x) == 0:
        raise DegenerateDataError("all samples are equal")
    m, s = x.mean(), x.std()
    z = (x - m) / s
    beta0 = math.sqrt(6) / math.pi
    start = np.array([-EULER_GAMMA * beta0, beta0, xi0])
    if not np.isfinite(_gev_nll(start, z)):
        start[2] = 0.0

    # log-scale parametrization keeps beta positive inside the simplex
    def obj(t):
        return _gev_nll((t[0], math.exp(t[1]), t[2]), z)

    t0 = np.array([start[0], math.log(start[1]), start[2]])
    opts = {"xatol": 1e-10, "fatol": 1e-10, "maxiter": maxiter, "maxfev": 2 * maxiter}
    res = scipy.optimize.minimize(obj, t0, method="Nelder-Mead", options=opts)
    # a restart from the optimum shakes off premature simplex collapse
    res = scipy.optimize.minimize(obj, res.x, method="Nelder-Mead", options=opts)
    theta = np.array([res.x[0], math.exp(res.x[1]), res.x[2]])
    if not res.success or not np.isfinite(res.fun):
        best = GevFit(m + s * theta[0], s * theta[1], theta[2], np.nan, np.nan, np.nan,
                      -float(res.fun) - x.size * math.log(s), x.size)
        raise ConvergenceError(f"GEV likelihood maximization failed: {res.message}", best=best)

    hess = _hessian(lambda t: _gev_nll(t, z), theta)
    try:
        cov = np.linalg.inv(hess)
        err = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        err = np.full(3, np.nan)
    return GevFit(alpha=float(m + s * theta[0]), beta=float(s * theta[1]), xi=float(theta[2]),
                  alpha_err=float(s * err[0]), beta_err=float(s * err[1]), xi_err=float(err[2]),
                  log_likelihood=float(-res.fun - x.size * math.log(s)), n=int(x.size))
