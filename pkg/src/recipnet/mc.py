"""Monte-Carlo studies: CI coverage, standardized-estimate normality, and the
joint behaviour of ``(mu_hat, rho_hat)`` across sparsity regimes.

Replicate ``r`` draws its covariates and graph from seeds derived from
``(config.seed, cell, stream, r)``, so reports are reproducible and do not
depend on how replicates are split across worker processes.
"""

import csv
import dataclasses
import json
import logging
import math
import sys
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .br import BrSparsitySpec, br_fit, br_sample
from .exceptions import ModelError, ValidationError
from .graph import CovariateSet, dyad_census
from .p15 import p15_fit, p15_sample, param_names

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "CoverageReport",
    "QQResult",
    "PhaseResult",
    "load_config",
    "run_coverage",
    "run_qq",
    "run_phase_transition",
]

log = logging.getLogger(__name__)

_STREAM_COVARIATES, _STREAM_GRAPH, _STREAM_FIXED = 0, 1, 2
_LAWS = ("uniform", "centered_uniform")


@dataclass
class ExperimentConfig:
    """Monte-Carlo design.

    ``theta0`` holds the n-free constants ``mu``, ``tau`` and, for the p1.5
    model, the lists ``gamma1``, ``gamma2``, ``delta``. ``cells`` lists the
    ``(a, b)`` pairs used by :func:`run_phase_transition`.
    """

    model: str = "p15"
    n: int = 200
    a: float = 0.5
    b: float = 0.5
    theta0: dict = field(default_factory=lambda: {
        "mu": 0.2, "tau": 0.5, "gamma1": [0.2], "gamma2": [0.4], "delta": [0.3]})
    replicates: int = 1000
    covariate_law: str = "uniform"
    covariates: str = "redraw"
    seed: int = 0
    level: float = 0.95
    tol: float = 1e-10
    max_iter: int = 200
    workers: int = 1
    cells: list = None

    def __post_init__(self):
        if self.model not in ("br", "p15"):
            raise ValidationError(f"model must be 'br' or 'p15', got {self.model!r}")
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError(f"n must be an integer >= 2, got {self.n}")
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ValidationError(f"replicates must be a positive integer, got {self.replicates}")
        if self.covariates not in ("redraw", "fixed"):
            raise ValidationError(f"covariates must be 'redraw' or 'fixed', got {self.covariates!r}")
        if self.covariate_law not in _LAWS:
            raise ValidationError(f"covariate_law must be one of {_LAWS}, got {self.covariate_law!r}")
        if not 0.0 < self.level < 1.0:
            raise ValidationError(f"level must lie in (0, 1), got {self.level}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError(f"seed must be a nonnegative integer, got {self.seed}")
        self.n, self.replicates, self.seed = int(self.n), int(self.replicates), int(self.seed)
        self.workers = max(1, int(self.workers))
        theta0 = dict(self.theta0)
        unknown = set(theta0) - {"mu", "tau", "gamma1", "gamma2", "delta"}
        if unknown:
            raise ValidationError(f"unknown theta0 keys {sorted(unknown)}")
        for key in ("mu", "tau"):
            if key not in theta0:
                raise ValidationError(f"theta0.{key} is required")
            theta0[key] = float(theta0[key])
        for key in ("gamma1", "gamma2", "delta"):
            theta0[key] = [float(v) for v in np.atleast_1d(theta0.get(key, []))]
        if self.model == "br":
            theta0.update(gamma1=[], gamma2=[], delta=[])
        self.theta0 = theta0
        self.spec  # validates a and b
        if self.cells is not None:
            cells = []
            for cell in self.cells:
                if len(cell) != 2:
                    raise ValidationError(f"cells must be [a, b] pairs, got {cell!r}")
                BrSparsitySpec(float(cell[0]), float(cell[1]), 0.0, 0.0)
                cells.append((float(cell[0]), float(cell[1])))
            self.cells = cells

    @property
    def spec(self):
        return BrSparsitySpec(self.a, self.b, self.theta0["mu"], self.theta0["tau"])

    @property
    def dims(self):
        return tuple(len(self.theta0[k]) for k in ("gamma1", "gamma2", "delta"))

    @property
    def coordinates(self):
        base = ["mu_n", "tau_n"] if self.model == "br" else param_names(*self.dims)
        return [*base, "rho_n"]

    def truth(self):
        s = self.spec
        mu_n, tau_n = s.mu_n(self.n), s.tau_n(self.n)
        t = self.theta0
        return np.array([mu_n, tau_n, *t["gamma1"], *t["gamma2"], *t["delta"], tau_n - 2.0 * mu_n])

    def with_cell(self, a, b):
        return dataclasses.replace(self, a=a, b=b, cells=None)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("workers")
        return d


def load_config(path):
    """Read an :class:`ExperimentConfig` from a TOML file."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
    try:
        return ExperimentConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# replicate machinery


def _seed_sequence(config, cell, stream, r=None):
    key = (cell, stream) if r is None else (cell, stream, r)
    return np.random.SeedSequence(config.seed, spawn_key=key)


def _draw_covariates(config, rng):
    d1, d2, d3 = config.dims
    cov = CovariateSet.uniform(config.n, d1, d2, d3, rng=rng)
    return cov.centered() if config.covariate_law == "centered_uniform" else cov


def _replicate(config, cell, r):
    graph_seed = int(_seed_sequence(config, cell, _STREAM_GRAPH, r).generate_state(1, np.uint64)[0])
    z = float(norm.ppf(0.5 + config.level / 2.0))
    try:
        if config.model == "br":
            g = br_sample(config.n, config.spec, graph_seed)
            fit = br_fit(dyad_census(g))
            p = fit.params
            est = np.array([p.mu_n, p.tau_n, p.rho_n])
            se = np.array([fit.se_mu, fit.se_tau, fit.se_rho])
        else:
            if config.covariates == "fixed":
                rng = np.random.default_rng(_seed_sequence(config, cell, _STREAM_FIXED))
            else:
                rng = np.random.default_rng(_seed_sequence(config, cell, _STREAM_COVARIATES, r))
            cov = _draw_covariates(config, rng)
            t = config.theta0
            g = p15_sample(config.n, config.spec, t["gamma1"], t["gamma2"], t["delta"], cov, graph_seed)
            fit = p15_fit(g, cov, tol=config.tol, max_iter=config.max_iter, level=config.level,
                          check_conditioning=False)
            if fit.se is None:
                return {"ok": False, "error": "InferenceUnavailable"}
            est = np.append(fit.estimates, fit.theta_hat.rho_n)
            se = np.append(fit.se, fit.se_rho)
    except ModelError as exc:
        log.info("replicate %d failed: %s", r, exc)
        return {"ok": False, "error": type(exc).__name__}
    return {"ok": True, "estimates": est, "se": se, "lower": est - z * se, "upper": est + z * se}


def _run_replicates(config, cell=0):
    jobs = range(config.replicates)
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            return list(ex.map(_replicate, [config] * len(jobs), [cell] * len(jobs), jobs,
                               chunksize=max(1, len(jobs) // (4 * config.workers))))
    return [_replicate(config, cell, r) for r in jobs]


def _split(results):
    ok = [res for res in results if res["ok"]]
    failures = dict(sorted(Counter(res["error"] for res in results if not res["ok"]).items()))
    return ok, failures


def _write_csv(rows, path):
    fields = list(rows[0]) if rows else []
    fh = open(path, "w", newline="", encoding="utf-8") if path != "-" else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()


def _nan_to_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# ---------------------------------------------------------------------------
# coverage


def binomial_band(level, replicates, z=1.959963984540054):
    """Range holding the empirical coverage of an exact ``level`` mechanism with ~95% probability."""
    half = z * math.sqrt(level * (1.0 - level) / max(replicates, 1))
    return level - half, level + half


@dataclass
class CoverageReport:
    config: ExperimentConfig
    names: list
    truth: list
    coverage: list
    median_width: list
    n_success: int
    failures: dict
    band: tuple
    wall_clock: float = 0.0

    def rows(self):
        return [
            {"model": self.config.model, "n": self.config.n, "a": self.config.a, "b": self.config.b,
             "coordinate": name, "truth": float(self.truth[k]), "coverage": _nan_to_none(float(self.coverage[k])),
             "median_width": _nan_to_none(float(self.median_width[k])),
             "band_lower": self.band[0], "band_upper": self.band[1],
             "n_success": self.n_success, "n_failed": sum(self.failures.values())}
            for k, name in enumerate(self.names)
        ]

    def to_dict(self, include_timing=False):
        doc = {"config": self.config.to_dict(), "cells": self.rows(), "failures": self.failures}
        if include_timing:
            doc["wall_clock_seconds"] = self.wall_clock
        return doc

    def to_json(self, include_timing=False):
        return json.dumps(self.to_dict(include_timing), indent=2)

    def write_csv(self, path):
        _write_csv(self.rows(), path)

    def coverage_of(self, name):
        return self.coverage[self.names.index(name)]

    def median_width_of(self, name):
        return self.median_width[self.names.index(name)]


def run_coverage(config, results=None):
    """Empirical coverage and median width of the nominal-level Wald intervals.

    Replicates whose fit fails (nonexistent MLE, nonconvergence, singular
    Hessian) are counted in ``failures`` and excluded from the denominators.
    """
    start = time.perf_counter()
    results = _run_replicates(config) if results is None else results
    ok, failures = _split(results)
    truth = config.truth()
    names = config.coordinates
    if ok:
        lower = np.array([res["lower"] for res in ok])
        upper = np.array([res["upper"] for res in ok])
        covered = (lower <= truth) & (truth <= upper)
        coverage = covered.mean(axis=0)
        median_width = np.median(np.sort(upper - lower, axis=0), axis=0)
    else:
        coverage = median_width = np.full(len(names), np.nan)
    return CoverageReport(config, names, truth.tolist(), coverage.tolist(), median_width.tolist(),
                          len(ok), failures, binomial_band(config.level, len(ok)),
                          time.perf_counter() - start)


# ---------------------------------------------------------------------------
# QQ / normality


@dataclass
class QQResult:
    config: ExperimentConfig
    names: list
    standardized: np.ndarray  # (successful replicates, coordinates)
    failures: dict

    def quantile_pairs(self):
        """``(coordinate, probability, theoretical, sample)`` rows for QQ plots."""
        m = self.standardized.shape[0]
        probs = (np.arange(1, m + 1) - 0.5) / m
        theo = norm.ppf(probs)
        rows = []
        for k, name in enumerate(self.names):
            sample = np.sort(self.standardized[:, k])
            rows.extend({"coordinate": name, "probability": float(p), "theoretical": float(t), "sample": float(s)}
                        for p, t, s in zip(probs, theo, sample))
        return rows

    def summary(self):
        std = self.standardized
        ddof = 1 if std.shape[0] > 1 else 0
        out = []
        for k, name in enumerate(self.names):
            col = std[:, k]
            q = np.quantile(col, [0.25, 0.5, 0.75]) if col.size else [np.nan] * 3
            out.append({"coordinate": name, "mean": float(col.mean()) if col.size else math.nan,
                        "sd": float(col.std(ddof=ddof)) if col.size else math.nan,
                        "q25": float(q[0]), "q50": float(q[1]), "q75": float(q[2])})
        return out

    def to_dict(self):
        return {"config": self.config.to_dict(), "summary": [{k: _nan_to_none(v) for k, v in row.items()}
                                                             for row in self.summary()],
                "failures": self.failures, "standardized": self.standardized.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path):
        _write_csv(self.quantile_pairs(), path)


def run_qq(config, results=None):
    """Standardized estimates ``(theta_hat_k - theta_0k) / se_k`` per replicate."""
    results = _run_replicates(config) if results is None else results
    ok, failures = _split(results)
    p = len(config.coordinates) - 1  # rho_n is derived, not a model coordinate
    truth = config.truth()[:p]
    if ok:
        std = np.array([(res["estimates"][:p] - truth) / res["se"][:p] for res in ok])
    else:
        std = np.zeros((0, p))
    return QQResult(config, config.coordinates[:p], std, failures)


# ---------------------------------------------------------------------------
# sparsity regimes


def theoretical_moments(a, b, mu0, tau0):
    """Limiting scaled variances and ``corr(mu_hat, rho_hat)`` in each sparsity regime.

    Scalings: ``sqrt(n^{2-a})`` for mu, ``sqrt(n^{2-b})`` for tau and
    ``sqrt(n^{2-max(a,b)})`` for rho.
    """
    rho0 = tau0 - 2.0 * mu0
    var_mu = math.exp(-mu0)
    var_tau = 2.0 * math.exp(-tau0)
    if math.isclose(a, b):
        var_rho = 2.0 * math.exp(-tau0) + 4.0 * math.exp(-mu0)
        corr = -2.0 / math.sqrt(4.0 + 2.0 * math.exp(-(mu0 + rho0)))
    elif a < b:
        var_rho = 2.0 * math.exp(-tau0)
        corr = 0.0
    else:
        var_rho = 4.0 * math.exp(-mu0)
        # rho_hat - rho0 = (tau_hat - tau0) - 2 (mu_hat - mu0), tau_hat's error vanishes faster
        corr = -1.0
    return {"var_mu": var_mu, "var_tau": var_tau, "var_rho": var_rho, "corr_mu_rho": corr}


@dataclass
class PhaseResult:
    config: ExperimentConfig
    rows_: list

    def rows(self):
        return self.rows_

    def cell(self, a, b):
        for row in self.rows_:
            if math.isclose(row["a"], a) and math.isclose(row["b"], b):
                return row
        raise KeyError((a, b))

    def to_dict(self):
        return {"config": self.config.to_dict(),
                "cells": [{k: _nan_to_none(v) for k, v in row.items()} for row in self.rows_]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path):
        _write_csv(self.rows_, path)


def run_phase_transition(config):
    """Empirical ``corr(mu_hat, rho_hat)`` and scaled variances for each ``(a, b)`` cell.

    Uses the BR design; ``config.cells`` defaults to one cell per regime
    ``a < b``, ``a = b``, ``a > b``.
    """
    if config.model != "br":
        raise ValidationError("phase-transition study requires model = 'br'")
    cells = config.cells or [(0.5, 1.0), (0.75, 0.75), (1.0, 0.5)]
    mu0, tau0 = config.theta0["mu"], config.theta0["tau"]
    n = config.n
    rows = []
    for idx, (a, b) in enumerate(cells):
        cfg = config.with_cell(a, b)
        ok, failures = _split(_run_replicates(cfg, cell=idx))
        theory = theoretical_moments(a, b, mu0, tau0)
        row = {"n": n, "a": a, "b": b, "replicates": len(ok), "failed": sum(failures.values())}
        if len(ok) >= 2:
            est = np.array([res["estimates"] for res in ok])
            err = est - cfg.truth()
            mu_err, tau_err, rho_err = err[:, 0], err[:, 1], err[:, 2]
            corr = float(np.corrcoef(mu_err, rho_err)[0, 1])
            var_mu = float(np.var(math.sqrt(n ** (2 - a)) * mu_err, ddof=1))
            var_tau = float(np.var(math.sqrt(n ** (2 - b)) * tau_err, ddof=1))
            var_rho = float(np.var(math.sqrt(n ** (2 - max(a, b))) * rho_err, ddof=1))
        else:
            corr = var_mu = var_tau = var_rho = math.nan
        row.update(
            corr_mu_rho=corr, theory_corr_mu_rho=theory["corr_mu_rho"],
            var_mu_scaled=var_mu, theory_var_mu=theory["var_mu"],
            var_tau_scaled=var_tau, theory_var_tau=theory["var_tau"],
            var_rho_scaled=var_rho, theory_var_rho=theory["var_rho"],
        )
        rows.append(row)
    return PhaseResult(config, rows)
