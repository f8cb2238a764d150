"""Experiment orchestration: configs, seeded disorder sweeps, result files.

Every run writes into its output directory:

* one or more CSV streams with one row per sample (floats at 17 significant
  digits, one whole-row write per realization);
* ``summary.json`` with pooled moments, fits, divergences and plot tables;
* ``manifest.json`` with the config echo, RNG scheme, per-realization seeds,
  package version, wall-clock time, residues and failures.

CSV and summary bytes depend only on the config (including its master seed);
the manifest also records timing and is therefore not byte-stable.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dynamics import (
    SPIN_HALF, CorrelationSeries, autocorrelation_operator, early_decay_fit, eth_record,
    otoc_dense, plateau_value,
)
from .entanglement import schmidt_spectra
from .errors import ConfigError, SchemaError
from .model import (
    RNG_ALGORITHM, SELF_DUAL, ChainParams, DenseOperator, FloquetOperator, build_dense_unitary,
    derive_seed, sample_coe,
)
from .rmt import (
    TW1, mp_cdf, mp_density, rescale_lambda_max, tridiagonal_lambda_max, wishart_lambda_max,
)
from .spectral import FilterSpec, default_filter_spec, dense_eig, match_eigenpairs, polfed, polfed_operator
from .stats import (
    fit_exponential_scaling, fit_gev, histogram_from_masses, kl_divergence, make_histogram,
    moment_summary, ratio_R, shared_edges,
)

log = logging.getLogger(__name__)

KINDS = ("schmidt-stats", "gev-fit", "wishart-reference", "eth", "autocorr", "otoc", "polfed-check")
ENSEMBLES = {"kfim": 0, "coe": 1}
METHODS = ("auto", "dense", "polfed")
WORKERS_ENV = "KFIM_WORKERS"
DENSE_AUTO_MAX_L = 9  # "auto" uses dense diagonalization up to this size

# total eigenvectors per L used for the published statistics
FULL_EIGENVECTORS = {8: 1_000_000, 9: 500_000, 10: 500_000, 11: 500_000, 12: 300_000,
                      13: 179_000, 14: 101_600, 15: 72_400, 16: 51_200, 18: 40_960}
FULL_AUTOCORR_REALIZATIONS = {8: 10_000, 9: 5_000, 10: 2_000, 11: 1_000, 12: 500, 13: 100, 14: 50}
FULL_OTOC_REALIZATIONS = 100
FULL_WISHART_DRAWS = 1_000_000
DESK_EIGENVECTORS = 2_000
DESK_REALIZATIONS = {"eth": 20, "otoc": 10, "polfed-check": 5}


# --- configuration ---------------------------------------------------------------

@dataclass
class ReferenceSpec:
    """Finite-size Wishart pool standing in for the Tracy-Widom law."""

    log2_dim: int = 9
    draws: int = 50_000
    seed: int = 20240101


@dataclass
class ExperimentConfig:
    kind: str
    output: str
    L: list = field(default_factory=list)
    realizations: object = None  # int, {L: int} or None for the desk default
    eigenpairs: int | None = None  # per realization; None -> D_K / 2
    seed: int = 0
    ensemble: object = "kfim"  # str, or list of str for otoc
    J: float = SELF_DUAL
    b: float = SELF_DUAL
    target_phase: float = math.pi / 2
    method: str = "auto"
    filter: dict = field(default_factory=dict)  # kappa / krylov_dim / residue_threshold
    bins: int = 100  # Marchenko-Pastur histogram over (0, 4]
    lambda_bins: int = 40  # rescaled largest-eigenvalue histogram
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    t_max: int = 100
    plateau_window: list = field(default_factory=lambda: [50, 100])
    draws: int = 1000  # wishart-reference draws per realization
    input: str | None = None  # gev-fit source CSV
    full_scale: bool = False

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a key-value mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key in ("kind", "output"):
            if key not in data:
                raise ConfigError(f"missing required key '{key}'")
        data = dict(data)
        ref = data.pop("reference", None) or {}
        if not isinstance(ref, dict):
            raise ConfigError("'reference' must be a mapping")
        bad = sorted(set(ref) - {f.name for f in fields(ReferenceSpec)})
        if bad:
            raise ConfigError(f"unknown reference keys: {', '.join(bad)}")
        cfg = cls(**data, reference=ReferenceSpec(**ref))
        cfg.validate()
        return cfg

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        def is_int(x):
            return isinstance(x, (int, np.integer)) and not isinstance(x, bool)

        need(self.kind in KINDS, f"kind must be one of {', '.join(KINDS)}; got {self.kind!r}")
        need(isinstance(self.output, str) and self.output, "output must be a directory path")
        need(isinstance(self.L, list) and all(is_int(x) for x in self.L), "L must be a list of integers")
        need(len(set(self.L)) == len(self.L), "L values must be distinct")
        if self.kind == "gev-fit":
            need(isinstance(self.input, str) and self.input, "gev-fit needs 'input' (an eigenpairs CSV)")
        else:
            need(len(self.L) > 0, "L list must not be empty")
        if self.kind == "wishart-reference":
            need(all(1 <= x <= 24 for x in self.L), "wishart-reference L is log2 of the dimension (1..24)")
        elif self.kind in ("schmidt-stats",):
            need(all(x >= 2 and x % 2 == 0 for x in self.L), "schmidt-stats uses even L >= 2")
        else:
            need(all(x >= 2 for x in self.L), "L must be >= 2")
        if self.kind == "otoc":
            need(all(x <= 12 for x in self.L), "dense OTOC supports L <= 12")
        if self.kind == "polfed-check":
            need(all(8 <= x <= 14 for x in self.L), "polfed-check needs 8 <= L <= 14")
        r = self.realizations
        if isinstance(r, dict):
            need(all(is_int(k) and is_int(v) and v >= 1 for k, v in r.items()),
                 "realizations mapping must be {L: positive int}")
            need(set(self.L) <= set(r), "realizations mapping must cover every L")
        else:
            need(r is None or (is_int(r) and r >= 1), "realizations must be a positive integer")
        need(self.eigenpairs is None or (is_int(self.eigenpairs) and self.eigenpairs >= 1),
             "eigenpairs must be a positive integer")
        need(is_int(self.seed) and self.seed >= 0, "seed must be a nonnegative integer")
        ens = self.ensemble if isinstance(self.ensemble, list) else [self.ensemble]
        need(len(ens) > 0 and all(e in ENSEMBLES for e in ens),
             f"ensemble must be among {', '.join(ENSEMBLES)}")
        need(isinstance(self.ensemble, str) or self.kind == "otoc", "ensemble lists are only used by otoc")
        if self.kind in ("eth", "autocorr", "polfed-check"):
            need(ens == ["kfim"], f"{self.kind} is defined for the kicked Ising chain only")
        for name in ("J", "b", "target_phase"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and math.isfinite(v), f"{name} must be a finite number")
        need(self.method in METHODS, f"method must be one of {', '.join(METHODS)}")
        bad = set(self.filter) - {"kappa", "krylov_dim", "residue_threshold"}
        need(not bad, f"unknown filter keys: {', '.join(sorted(bad))}")
        if self.filter:
            FilterSpec(**{**asdict(default_filter_spec(8)), **self.filter})
        need(is_int(self.bins) and self.bins >= 2, "bins must be an integer >= 2")
        need(is_int(self.lambda_bins) and self.lambda_bins >= 2, "lambda_bins must be an integer >= 2")
        ref = self.reference
        need(is_int(ref.log2_dim) and 1 <= ref.log2_dim <= 24, "reference.log2_dim must be in 1..24")
        need(is_int(ref.draws) and ref.draws >= 100, "reference.draws must be >= 100")
        need(is_int(ref.seed) and ref.seed >= 0, "reference.seed must be a nonnegative integer")
        need(is_int(self.t_max) and self.t_max >= 1, "t_max must be a positive integer")
        w = self.plateau_window
        need(isinstance(w, list) and len(w) == 2 and all(is_int(x) for x in w) and 0 <= w[0] < w[1],
             "plateau_window must be [start, end] with 0 <= start < end")
        if self.kind == "autocorr":
            need(w[1] <= self.t_max, "plateau_window must end at or before t_max")
        need(is_int(self.draws) and self.draws >= 1, "draws must be a positive integer")
        need(isinstance(self.full_scale, bool), "full_scale must be true or false")

    def ensembles(self) -> list[str]:
        return list(self.ensemble) if isinstance(self.ensemble, list) else [self.ensemble]

    def filter_spec(self, L: int) -> FilterSpec:
        base = default_filter_spec(L) if L >= 8 else FilterSpec(
            kappa=math.floor(0.8 * 2.0 ** (L / 2)), krylov_dim=math.floor(2.0 ** (L / 2 + 2)))
        spec = FilterSpec(**{**asdict(base), "target_phase": self.target_phase, **self.filter})
        return spec

    def pairs_per_realization(self, L: int) -> int:
        if self.eigenpairs is not None:
            return min(self.eigenpairs, 1 << L)
        if self.kind == "autocorr":
            return 1
        return min(self.filter_spec(L).krylov_dim // 2, 1 << L)

    def realization_count(self, L: int) -> int:
        r = self.realizations
        if isinstance(r, dict):
            return int(r[L])
        if r is not None:
            return int(r)
        k = self.kind
        if k == "wishart-reference":
            total = FULL_WISHART_DRAWS if self.full_scale else 10_000
            return max(1, math.ceil(total / self.draws))
        if k == "autocorr":
            if self.full_scale:
                return FULL_AUTOCORR_REALIZATIONS.get(L, 50)
            return max(1, FULL_AUTOCORR_REALIZATIONS.get(L, 50) // 100)
        if k == "otoc":
            return FULL_OTOC_REALIZATIONS if self.full_scale else DESK_REALIZATIONS["otoc"]
        if k == "polfed-check":
            return DESK_REALIZATIONS["polfed-check"]
        total = FULL_EIGENVECTORS.get(L, DESK_EIGENVECTORS) if self.full_scale else DESK_EIGENVECTORS
        if k == "eth" and not self.full_scale:
            return DESK_REALIZATIONS["eth"]
        return max(1, math.ceil(total / self.pairs_per_realization(L)))

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> ExperimentConfig:
    """Read a YAML config file and validate every field."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return ExperimentConfig.from_mapping(data)


# --- CSV streams -----------------------------------------------------------------

STREAMS = {
    "schmidt-stats": {
        "eigenpairs": [("ensemble", str), ("L", int), ("realization", int), ("seed", int), ("index", int),
                       ("phase", float), ("residue", float), ("lambda_max", float),
                       ("lambda_max_rescaled", float)],
        "spectrum_hist": [("ensemble", str), ("L", int), ("realization", int), ("seed", int),
                          ("bin", int), ("count", int)],
    },
    "gev-fit": {
        "maxima": [("ensemble", str), ("L", int), ("realization", int), ("seed", int), ("index", int),
                   ("lambda_max", float)],
    },
    "wishart-reference": {
        "wishart": [("log2_dim", int), ("realization", int), ("seed", int), ("draw", int),
                    ("lambda_max", float), ("lambda_max_rescaled", float)],
    },
    "eth": {
        "eth": [("L", int), ("realization", int), ("seed", int), ("count", int), ("mean_gap", float),
                ("max_gap", float), ("offdiag_rms", float), ("max_residue", float)],
    },
    "autocorr": {
        "autocorr": [("L", int), ("realization", int), ("seed", int), ("index", int), ("phase", float),
                     ("t", int), ("re", float), ("im", float), ("abs", float)],
    },
    "otoc": {
        "otoc": [("ensemble", str), ("L", int), ("realization", int), ("seed", int), ("t", int),
                 ("value", float)],
    },
    "polfed-check": {
        "polfed_check": [("L", int), ("realization", int), ("seed", int), ("count", int),
                         ("returned", int), ("max_phase_error", float), ("min_overlap", float),
                         ("max_residue", float)],
    },
}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _rows_text(rows) -> str:
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in rows)


class CsvStream:
    """Single-writer CSV file; each realization lands in one write + flush."""

    def __init__(self, path: Path, columns):
        self.path = path
        self.columns = [c for c, _ in columns]
        self._fh = open(path, "w", newline="")
        self._fh.write(",".join(self.columns) + "\n")
        self._fh.flush()

    def append(self, rows):
        if rows:
            self._fh.write(_rows_text(rows))
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self):
        self._fh.close()


def read_stream(path, schema) -> dict[str, np.ndarray]:
    """Columns of a result CSV as arrays, in canonical (sorted-row) order.

    A trailing partial row (from an interrupted run) is ignored. Raises
    :class:`SchemaError` naming the first column that does not match.
    """
    path = Path(path)
    text = path.read_text()
    if text and not text.endswith("\n"):
        text = text[: text.rfind("\n") + 1]
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    names = [c for c, _ in schema]
    if header is None:
        raise SchemaError(f"{path}: empty file")
    for i, name in enumerate(names):
        if i >= len(header) or header[i] != name:
            got = header[i] if i < len(header) else "<missing>"
            raise SchemaError(f"{path}: column {i + 1} should be '{name}', found '{got}'")
    if len(header) > len(names):
        raise SchemaError(f"{path}: unexpected extra column '{header[len(names)]}'")
    rows = []
    for line in reader:
        if len(line) != len(names):
            raise SchemaError(f"{path}: row with {len(line)} fields, expected {len(names)}")
        rows.append(tuple(t(v) for (_, t), v in zip(schema, line)))
    return _columns(rows, schema)


def _columns(rows, schema) -> dict[str, np.ndarray]:
    rows = sorted(rows)
    out = {}
    for i, (name, typ) in enumerate(schema):
        vals = [r[i] for r in rows]
        dtype = object if typ is str else (np.uint64 if name == "seed" else typ)  # seeds are 64-bit unsigned
        out[name] = np.array(vals, dtype=dtype)
    return out


# --- per-realization work ----------------------------------------------------------

def _eigenpairs(cfg: ExperimentConfig, ensemble: str, L: int, seed: int, count: int):
    """Eigenpairs near the target phase for one realization, plus its operator."""
    target = cfg.target_phase
    if ensemble == "coe":
        u = sample_coe(1 << L, seed)
        return dense_eig(u).closest(count, target), DenseOperator(u).apply
    params = ChainParams.random(L, seed, J=cfg.J, b=cfg.b)
    op = FloquetOperator(params)
    method = cfg.method
    if method == "auto":
        method = "dense" if L <= DENSE_AUTO_MAX_L else "polfed"
    if method == "dense":
        return dense_eig(build_dense_unitary(params, op)).closest(count, target), op.apply
    spec = cfg.filter_spec(L)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # incompleteness is reported via the set
        eigs = polfed_operator(op.apply, op.dim, spec, count=min(count, spec.krylov_dim // 2), seed=seed)
    return eigs, op.apply


def _task_schmidt(cfg, ensemble, L, r, seed):
    count = cfg.pairs_per_realization(L)
    eigs, _ = _eigenpairs(cfg, ensemble, L, seed, count)
    lam = schmidt_spectra(eigs.vectors, L)
    D = 1 << (L // 2)
    lmax = lam[:, 0]
    resc = rescale_lambda_max(lmax, D)
    rows = [(ensemble, L, r, seed, i, float(eigs.phases[i]), float(eigs.residues[i]), float(lmax[i]),
             float(resc[i])) for i in range(len(eigs))]
    counts, _ = np.histogram((D * lam).reshape(-1), bins=np.linspace(0.0, 4.0, cfg.bins + 1))
    hist = [(ensemble, L, r, seed, k, int(c)) for k, c in enumerate(counts)]
    info = {"max_residue": float(eigs.residues.max(initial=0.0)), "complete": bool(eigs.complete)}
    return {"eigenpairs": rows, "spectrum_hist": hist}, info


def _task_wishart(cfg, _ensemble, log2_dim, r, seed):
    D = 1 << log2_dim
    draws = cfg.draws
    lmax = wishart_lambda_max(D, draws, seed) if D <= 1024 else tridiagonal_lambda_max(D, draws, seed)
    resc = rescale_lambda_max(lmax, D)
    rows = [(log2_dim, r, seed, i, float(lmax[i]), float(resc[i])) for i in range(draws)]
    return {"wishart": rows}, {}


def _task_eth(cfg, _ensemble, L, r, seed):
    count = cfg.pairs_per_realization(L)
    eigs, _ = _eigenpairs(cfg, "kfim", L, seed, count)
    rec = eth_record(eigs, scale=SPIN_HALF)
    mx = float(eigs.residues.max(initial=0.0))
    row = (L, r, seed, len(eigs), rec.mean_gap, rec.max_gap, rec.offdiag_rms, mx)
    return {"eth": [row]}, {"max_residue": mx, "complete": bool(eigs.complete)}


def _task_autocorr(cfg, _ensemble, L, r, seed):
    count = cfg.pairs_per_realization(L)
    eigs, apply_u = _eigenpairs(cfg, "kfim", L, seed, count)
    rows = []
    for i in range(len(eigs)):
        c = autocorrelation_operator(apply_u, L, float(eigs.phases[i]), eigs.vectors[:, i], cfg.t_max)
        rows += [(L, r, seed, i, float(eigs.phases[i]), int(t), float(v.real), float(v.imag), float(abs(v)))
                 for t, v in zip(c.times, c.values)]
    mx = float(eigs.residues.max(initial=0.0))
    return {"autocorr": rows}, {"max_residue": mx, "complete": bool(eigs.complete)}


def _task_otoc(cfg, ensemble, L, r, seed):
    if ensemble == "coe":
        u = sample_coe(1 << L, seed)
    else:
        u = build_dense_unitary(ChainParams.random(L, seed, J=cfg.J, b=cfg.b))
    c = otoc_dense(u, L, cfg.t_max)
    return {"otoc": [(ensemble, L, r, seed, int(t), float(v)) for t, v in zip(c.times, c.values)]}, {}


def _task_polfed_check(cfg, _ensemble, L, r, seed):
    params = ChainParams.random(L, seed, J=cfg.J, b=cfg.b)
    spec = cfg.filter_spec(L)
    count = cfg.pairs_per_realization(L)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        eigs = polfed(params, spec, count=count, seed=seed)
    ref = dense_eig(build_dense_unitary(params))
    _, err, ov = match_eigenpairs(eigs, ref)
    mx = float(eigs.residues.max(initial=0.0))
    row = (L, r, seed, count, len(eigs), float(err.max(initial=0.0)), float(ov.min(initial=1.0)), mx)
    return {"polfed_check": [row]}, {"max_residue": mx, "complete": bool(eigs.complete)}


TASKS = {"schmidt-stats": _task_schmidt, "wishart-reference": _task_wishart, "eth": _task_eth,
         "autocorr": _task_autocorr, "otoc": _task_otoc, "polfed-check": _task_polfed_check}


def _run_task(job):
    cfg_dict, ensemble, L, r, seed = job
    cfg = ExperimentConfig.from_mapping(cfg_dict)
    t0 = time.perf_counter()
    try:
        rows, info = TASKS[cfg.kind](cfg, ensemble, L, r, seed)
    except Exception as exc:  # one bad realization must not sink the sweep
        return None, {"error": f"{type(exc).__name__}: {exc}"}
    info["seconds"] = time.perf_counter() - t0
    return rows, info


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def _jobs(cfg: ExperimentConfig):
    data = _config_echo(cfg)
    for ens in cfg.ensembles():
        for L in cfg.L:
            for r in range(cfg.realization_count(L)):
                if cfg.kind == "wishart-reference":
                    seed = derive_seed(cfg.seed, L, r)
                else:
                    seed = derive_seed(cfg.seed, ENSEMBLES[ens], L, r)
                yield data, ens, L, r, seed


def _config_echo(cfg: ExperimentConfig) -> dict:
    d = cfg.to_dict()
    return d


# --- summaries ---------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _plot(title, columns, rows):
    return {"title": title, "columns": columns, "rows": [list(r) for r in rows]}


@lru_cache(maxsize=8)
def reference_pool(log2_dim: int, draws: int, seed: int) -> np.ndarray:
    """Rescaled largest eigenvalues of unit-trace Wishart matrices of size 2**log2_dim."""
    D = 1 << log2_dim
    lmax = wishart_lambda_max(D, draws, seed) if D <= 64 else tridiagonal_lambda_max(D, draws, seed)
    return rescale_lambda_max(lmax, D)


def lambda_divergence(model, reference, bins: int) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """D_KL(reference || model) on shared equal-width bins over the pooled range."""
    edges = shared_edges(model, reference, bins=bins)
    hm, hr = make_histogram(model, edges), make_histogram(reference, edges)
    return kl_divergence(hr, hm), edges, hm.density(), hr.density()


def _moments(x):
    return moment_summary(x).as_dict() if np.asarray(x).size >= 3 else None


def _summarize_schmidt(cfg, t):
    ep, hist = t["eigenpairs"], t["spectrum_hist"]
    ref = reference_pool(cfg.reference.log2_dim, cfg.reference.draws, cfg.reference.seed)
    groups = sorted(set(zip(ep["ensemble"], ep["L"].tolist())))
    per, plots = {}, {}
    for ens, L in groups:
        m = (ep["ensemble"] == ens) & (ep["L"] == L)
        x = ep["lambda_max_rescaled"][m].astype(float)
        mom = moment_summary(x)
        kl_ref, edges, dm, dr = lambda_divergence(x, ref, cfg.lambda_bins)
        hm = (hist["ensemble"] == ens) & (hist["L"] == L)
        counts = np.bincount(hist["bin"][hm], weights=hist["count"][hm], minlength=cfg.bins)
        mp_edges = np.linspace(0.0, 4.0, cfg.bins + 1)
        model_h = histogram_from_masses(mp_edges, counts)
        mp_h = histogram_from_masses(mp_edges, np.diff(mp_cdf(mp_edges)))
        key = f"{ens}/L={L}"
        per[key] = {
            "ensemble": ens, "L": L, "eigenvectors": int(m.sum()),
            "realizations": int(np.unique(ep["seed"][m]).size),
            "moments": mom.as_dict(), "R": ratio_R(mom.mean, TW1), "kl_reference": kl_ref,
            "kl_mp": kl_divergence(mp_h, model_h), "max_residue": float(ep["residue"][m].max()),
        }
        centers = 0.5 * (edges[1:] + edges[:-1])
        plots[f"lambda-hist/{key}"] = _plot(
            f"rescaled largest Schmidt eigenvalue distribution, {ens} L={L}",
            ["lambda_max_rescaled [dimensionless]", "density_model [1/unit]",
             "density_wishart_reference [1/unit]"], zip(centers, dm, dr))
        mc = model_h.centers
        plots[f"mp-density/{key}"] = _plot(
            f"rescaled Schmidt spectrum vs Marchenko-Pastur law, {ens} L={L}",
            ["e_rescaled [dimensionless]", "density_model [1/unit]", "density_marchenko_pastur [1/unit]"],
            zip(mc, model_h.density(), mp_density(mc)))
    for ens in sorted({g[0] for g in groups}):
        Ls = [L for e, L in groups if e == ens]
        plots[f"R-vs-L/{ens}"] = _plot(
            f"distance of mean rescaled largest eigenvalue from Tracy-Widom mean, {ens}",
            ["L [sites]", "R [TW standard deviations]"], [(L, per[f"{ens}/L={L}"]["R"]) for L in Ls])
        plots[f"dkl-vs-L/{ens}"] = _plot(
            f"KL divergence of largest-eigenvalue distribution from Wishart reference, {ens}",
            ["L [sites]", "D_KL [nats]"], [(L, per[f"{ens}/L={L}"]["kl_reference"]) for L in Ls])
    ref_mom = moment_summary(ref).as_dict()
    return {"groups": per, "reference": {**asdict(cfg.reference), "moments": ref_mom}}, plots


def _summarize_gev(cfg, t):
    x = t["maxima"]["lambda_max"].astype(float)
    fit = fit_gev(x)
    h = make_histogram(x, bins=cfg.lambda_bins)
    plots = {"gev": _plot("largest Schmidt eigenvalue with fitted generalized extreme value density",
                          ["lambda_max [dimensionless]", "density_samples [1/unit]", "density_gev_fit [1/unit]"],
                          zip(h.centers, h.density(), fit.density(h.centers)))}
    z = fit.xi / fit.xi_err if fit.xi_err and math.isfinite(fit.xi_err) else float("nan")
    return {"fit": fit.as_dict(), "xi_significance": z, "moments": moment_summary(x).as_dict(),
            "sources": sorted({f"{e}/L={L}" for e, L in zip(t["maxima"]["ensemble"], t["maxima"]["L"])})}, plots


def _summarize_wishart(cfg, t):
    w = t["wishart"]
    per, plots = {}, {}
    for n in sorted(set(w["log2_dim"].tolist())):
        x = w["lambda_max_rescaled"][w["log2_dim"] == n].astype(float)
        mom = moment_summary(x)
        per[f"log2_dim={n}"] = {"log2_dim": n, "draws": int(x.size), "moments": mom.as_dict(),
                                "R": ratio_R(mom.mean, TW1)}
        h = make_histogram(x, bins=cfg.lambda_bins)
        plots[f"lambda-hist/log2_dim={n}"] = _plot(
            f"rescaled largest eigenvalue of unit-trace Wishart matrices, D=2^{n}",
            ["lambda_max_rescaled [dimensionless]", "density [1/unit]"], zip(h.centers, h.density()))
    return {"groups": per}, plots


ETH_QUANTITIES = {"mean_gap": "mean diagonal gap", "max_gap": "maximum diagonal gap",
                  "offdiag_rms": "off-diagonal fluctuation"}


def _summarize_eth(cfg, t):
    e = t["eth"]
    Ls = sorted(set(e["L"].tolist()))
    per = {}
    for L in Ls:
        m = e["L"] == L
        d = {"L": L, "realizations": int(m.sum()), "max_residue": float(e["max_residue"][m].max())}
        for q in ETH_QUANTITIES:
            v = e[q][m].astype(float)
            d[q] = float(v.mean())
            d[q + "_stderr"] = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        per[f"L={L}"] = d
    fits, plots = {}, {}
    for q, label in ETH_QUANTITIES.items():
        vals = [per[f"L={L}"][q] for L in Ls]
        fit = None
        if len(Ls) >= 3:
            f = fit_exponential_scaling(Ls, vals)
            fit = f.as_dict()
            pred = f.predict(Ls)
        else:
            pred = [float("nan")] * len(Ls)
        fits[q] = fit
        plots[f"eth-{q.replace('_', '-')}"] = _plot(
            f"{label} of S^z versus chain length with exponential fit",
            ["L [sites]", f"{q} [hbar units]", "stderr [hbar units]", "fit [hbar units]"],
            [(L, per[f"L={L}"][q], per[f"L={L}"][q + "_stderr"], p) for L, p in zip(Ls, pred)])
    return {"groups": per, "fits": fits}, plots


def _series_by_group(t, value, keys):
    """Average time series over realizations/eigenstates for each key group."""
    out = {}
    tt = t["t"]
    groups = sorted(set(zip(*[t[k].tolist() for k in keys])))
    for g in groups:
        m = np.ones(tt.size, dtype=bool)
        for k, v in zip(keys, g):
            m &= t[k] == v
        sub_t = tt[m]
        ident = np.array([f"{s}:{i}" for s, i in zip(t["seed"][m], t.get("index", t["seed"])[m])])
        times = np.unique(sub_t)
        series = []
        for s in sorted(set(ident.tolist())):
            sm = ident == s
            order = np.argsort(sub_t[sm], kind="stable")
            series.append(CorrelationSeries(times=times, values=t[value][m][sm][order].astype(float)))
        out[g] = CorrelationSeries.average(series)
    return out


def _summarize_autocorr(cfg, t):
    a = t["autocorr"]
    curves = _series_by_group(a, "abs", ["L"])
    per, plots = {}, {}
    window = tuple(cfg.plateau_window)
    for (L,), c in curves.items():
        mean, sd = plateau_value(c, window)
        fit = early_decay_fit(c, window)
        per[f"L={L}"] = {"L": L, "series": c.count, "plateau": mean, "plateau_std": sd,
                         "early_fit": fit, "value_t1": float(c.values[1]) if c.values.size > 1 else None}
        plots[f"autocorr/L={L}"] = _plot(
            f"disorder-averaged spin autocorrelation magnitude, L={L}",
            ["t [Floquet periods]", "mean_abs_C [dimensionless]", "stderr [dimensionless]"],
            zip(c.times, c.values, c.stderr))
    Ls = sorted(k[0] for k in curves)
    plots["plateau-vs-L"] = _plot(
        "late-time autocorrelation plateau versus chain length",
        ["L [sites]", "plateau [dimensionless]", "temporal_std [dimensionless]"],
        [(L, per[f"L={L}"]["plateau"], per[f"L={L}"]["plateau_std"]) for L in Ls])
    return {"groups": per}, plots


def _summarize_otoc(cfg, t):
    o = t["otoc"]
    curves = _series_by_group(o, "value", ["ensemble", "L"])
    per, plots = {}, {}
    for (ens, L), c in curves.items():
        start = c.times[-1] // 2
        sat = float(c.values[c.times >= start].mean())
        reached = np.flatnonzero(c.values >= 0.9 * sat)
        per[f"{ens}/L={L}"] = {"ensemble": ens, "L": L, "realizations": c.count, "saturation": sat,
                               "saturation_window": [int(start), int(c.times[-1])],
                               "t_saturation": int(c.times[reached[0]]) if reached.size else None,
                               "value_t0": float(c.values[0])}
    for L in sorted({k[1] for k in curves}):
        kf, co = curves.get(("kfim", L)), curves.get(("coe", L))
        main = kf if kf is not None else co
        if kf is not None and co is not None:
            rows = zip(kf.times, kf.values, kf.stderr, co.values)
            cols = ["t [Floquet periods]", "otoc_kfim [dimensionless]", "stderr_kfim [dimensionless]",
                    "otoc_coe [dimensionless]"]
        else:
            rows = zip(main.times, main.values, main.stderr)
            cols = ["t [Floquet periods]", "otoc [dimensionless]", "stderr [dimensionless]"]
        plots[f"otoc/L={L}"] = _plot(f"infinite-temperature squared commutator of central sigma^z, L={L}",
                                     cols, rows)
    return {"groups": per}, plots


def _summarize_polfed(cfg, t):
    p = t["polfed_check"]
    per = {}
    for L in sorted(set(p["L"].tolist())):
        m = p["L"] == L
        per[f"L={L}"] = {"L": L, "realizations": int(m.sum()),
                         "max_phase_error": float(p["max_phase_error"][m].max()),
                         "min_overlap": float(p["min_overlap"][m].min()),
                         "max_residue": float(p["max_residue"][m].max()),
                         "incomplete": int(np.sum(p["returned"][m] < p["count"][m]))}
    Ls = sorted(int(k.split("=")[1]) for k in per)
    plots = {"residue-vs-L": _plot("maximum filtered-Arnoldi residue versus chain length",
                                   ["L [sites]", "max_residue [dimensionless]"],
                                   [(L, per[f"L={L}"]["max_residue"]) for L in Ls]),
             "phase-error-vs-L": _plot("maximum eigenphase deviation from dense diagonalization",
                                       ["L [sites]", "max_phase_error [rad]"],
                                       [(L, per[f"L={L}"]["max_phase_error"]) for L in Ls])}
    overall = max(v["max_phase_error"] for v in per.values())
    return {"groups": per, "max_phase_error": overall}, plots


SUMMARIZERS = {"schmidt-stats": _summarize_schmidt, "gev-fit": _summarize_gev,
               "wishart-reference": _summarize_wishart, "eth": _summarize_eth,
               "autocorr": _summarize_autocorr, "otoc": _summarize_otoc,
               "polfed-check": _summarize_polfed}


def summarize(cfg: ExperimentConfig, tables: dict) -> dict:
    """Pooled summary of result tables (columns in canonical row order)."""
    for name, cols in tables.items():
        if next(iter(cols.values())).size == 0:
            raise SchemaError(f"stream '{name}' has no rows")
    body, plots = SUMMARIZERS[cfg.kind](cfg, tables)
    return _clean({"kind": cfg.kind, "version": __version__, "summary": body, "plots": plots})


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


# --- entry points ------------------------------------------------------------------

def _gev_input_rows(cfg: ExperimentConfig):
    src = Path(cfg.input)
    if not src.is_file():
        raise ConfigError(f"gev-fit input {src} does not exist")
    ep = read_stream(src, STREAMS["schmidt-stats"]["eigenpairs"])
    m = np.ones(ep["L"].size, dtype=bool)
    if cfg.L:
        m &= np.isin(ep["L"], cfg.L)
    rows = [(e, int(L), int(r), int(s), int(i), float(x)) for e, L, r, s, i, x in
            zip(ep["ensemble"][m], ep["L"][m], ep["realization"][m], ep["seed"][m], ep["index"][m],
                ep["lambda_max"][m])]
    if not rows:
        raise ConfigError(f"gev-fit input {src} has no rows for L={cfg.L}")
    return rows


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> Path:
    """Run a validated experiment and write its CSV streams, summary and manifest."""
    cfg.validate()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    workers = worker_count() if workers is None else workers
    schema = STREAMS[cfg.kind]
    t0 = time.perf_counter()
    seeds, failures, residues, incomplete = [], [], {}, 0

    streams = {name: CsvStream(out / f"{name}.csv", cols) for name, cols in schema.items()}
    try:
        if cfg.kind == "gev-fit":
            streams["maxima"].append(_gev_input_rows(cfg))
        else:
            jobs = list(_jobs(cfg))
            log.info("%s: %d realizations on %d worker(s)", cfg.kind, len(jobs), workers)
            if workers > 1:
                pool = concurrent.futures.ProcessPoolExecutor(max_workers=workers)
                results = pool.map(_run_task, jobs)
            else:
                pool = None
                results = map(_run_task, jobs)
            try:
                # map yields in submission order, which fixes the row order on disk
                for (_, ens, L, r, seed), (rows, info) in zip(jobs, results):
                    entry = {"ensemble": ens, "L": L, "realization": r, "seed": seed}
                    seeds.append(entry)
                    if rows is None:
                        failures.append({**entry, "error": info["error"]})
                        log.warning("realization %s failed: %s", entry, info["error"])
                        continue
                    for name, rws in rows.items():
                        streams[name].append(rws)
                    if "max_residue" in info:
                        key = f"{ens}/L={L}"
                        residues[key] = max(residues.get(key, 0.0), info["max_residue"])
                    incomplete += not info.get("complete", True)
            finally:
                if pool is not None:
                    pool.shutdown()
    finally:
        for s in streams.values():
            s.close()

    tables = {name: read_stream(out / f"{name}.csv", cols) for name, cols in schema.items()}
    _write_json(out / "summary.json", summarize(cfg, tables))
    manifest = {
        "config": _config_echo(cfg), "rng": RNG_ALGORITHM,
        "seed_derivation": "derive_seed(master, ensemble_code, L, realization); "
                           "wishart-reference: derive_seed(master, log2_dim, realization)",
        "seeds": seeds, "version": __version__, "numpy": np.__version__,
        "wall_clock_seconds": time.perf_counter() - t0, "workers": workers,
        "max_residue": residues, "incomplete_eigensets": incomplete,
        "failed_realizations": len(failures), "failures": failures,
    }
    _write_json(out / "manifest.json", _clean(manifest))
    return out


def aggregate(dirs) -> dict:
    """Pool the CSV streams of several run directories and recompute the summary.

    Rows are pooled in canonical sorted order, so the result does not depend
    on the order of ``dirs``. Binning and reference settings come from the
    first directory's manifest.
    """
    dirs = sorted({str(Path(d)) for d in dirs})
    if not dirs:
        raise SchemaError("no input directories to aggregate")
    cfg = None
    for d in dirs:
        mpath = Path(d) / "manifest.json"
        if not mpath.is_file():
            raise SchemaError(f"{d}: no manifest.json")
        c = ExperimentConfig.from_mapping(json.loads(mpath.read_text())["config"])
        if cfg is None:
            cfg = c
        elif c.kind != cfg.kind:
            raise SchemaError(f"{d}: kind '{c.kind}' differs from '{cfg.kind}'")
    tables = {}
    for name, cols in STREAMS[cfg.kind].items():
        rows = []
        for d in dirs:
            t = read_stream(Path(d) / f"{name}.csv", cols)
            rows += list(zip(*[t[c].tolist() for c, _ in cols]))
        tables[name] = _columns(rows, cols)
    return summarize(cfg, tables)


def plot_kinds(summary: dict) -> list[str]:
    return sorted({k.split("/")[0] for k in summary.get("plots", {})})


def emit_plot_data(summary: dict, kind: str, select: str | None = None) -> str:
    """Plot-ready CSV text for ``kind``.

    ``select`` picks one group (e.g. ``kfim/L=12`` or ``L=10``) when the
    summary holds several; the last group in sorted order is the default.
    """
    plots = summary.get("plots", {})
    keys = sorted(k for k in plots if k.split("/")[0] == kind)
    if not keys:
        raise KeyError(f"plot kind '{kind}' not in summary; available: {', '.join(plot_kinds(summary))}")
    if select is not None:
        match = [k for k in keys if k == f"{kind}/{select}"]
        if not match:
            opts = ", ".join(k.partition("/")[2] for k in keys)
            raise KeyError(f"group '{select}' not available for '{kind}'; choose from: {opts}")
        key = match[0]
    else:
        key = max(keys, key=_group_order)
    p = plots[key]
    buf = io.StringIO()
    buf.write(f"# {p['title']}\n")
    buf.write(f"# units: {'; '.join(p['columns'])}\n")
    buf.write(",".join(c.split(" [")[0] for c in p["columns"]) + "\n")
    for row in p["rows"]:
        buf.write(",".join("nan" if v is None else _fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _group_order(key: str):
    # numeric L ordering so L=12 sorts after L=8
    tail = key.partition("/")[2]
    parts = []
    for tok in tail.split("/"):
        name, _, val = tok.partition("=")
        parts.append((name, int(val)) if val.isdigit() else (tok, -1))
    return parts


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kickedising",
                                     description="Kicked Ising spectral statistics experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a YAML config")
    p_run.add_argument("config")
    p_agg = sub.add_parser("aggregate", help="pool result directories into one summary")
    p_agg.add_argument("dirs", nargs="+")
    p_agg.add_argument("-o", "--out", help="summary path (default: stdout)")
    p_plot = sub.add_parser("plot-data", help="emit a plot-ready CSV from a summary")
    p_plot.add_argument("summary")
    p_plot.add_argument("--kind", required=True)
    p_plot.add_argument("--group", help="group within the kind, e.g. kfim/L=12")
    p_plot.add_argument("-o", "--out", help="CSV path (default: stdout)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "run":
            out = run_experiment(load_config(args.config))
            print(out)
        elif args.command == "aggregate":
            text = json.dumps(aggregate(args.dirs), indent=2, sort_keys=True, allow_nan=False) + "\n"
            _emit(text, args.out)
        else:
            summary = json.loads(Path(args.summary).read_text())
            _emit(emit_plot_data(summary, args.kind, args.group), args.out)
    except (ValueError, KeyError, OSError, MemoryError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    return 0


def _emit(text: str, path: str | None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)
