"""Bernoulli model with reciprocity (BR).

Each dyad independently takes configuration (0,0), (1,0), (0,1) or (1,1) with
probabilities proportional to ``1, exp(mu_n), exp(mu_n), exp(tau_n)``, where
``tau_n = 2 mu_n + rho_n``. The dyad census is sufficient and the MLE has a
closed form. Estimation works in ``(mu_n, tau_n)``; ``rho_n`` is always derived.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from ._rng import draw_categories, dyad_uniforms
from .exceptions import MleDoesNotExist, NoConvergence, ValidationError
from .graph import DirectedGraph, DyadCensus

__all__ = [
    "BrParams",
    "BrSparsitySpec",
    "BrFit",
    "br_dyad_probabilities",
    "br_nll",
    "br_gradient",
    "br_fit",
    "br_standard_errors",
    "br_sample",
    "normal_quantile",
]

_LOG2 = math.log(2.0)


def normal_quantile(level):
    """Two-sided critical value, e.g. 1.959964 for ``level=0.95``."""
    if not 0.0 < level < 1.0:
        raise ValidationError(f"confidence level must lie in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2.0))


@dataclass(frozen=True)
class BrParams:
    """Dyad log-odds ``mu_n`` (asymmetric) and ``tau_n`` (mutual)."""

    mu_n: float
    tau_n: float

    def __post_init__(self):
        if not (math.isfinite(self.mu_n) and math.isfinite(self.tau_n)):
            raise ValidationError(f"BR parameters must be finite, got ({self.mu_n}, {self.tau_n})")

    @property
    def rho_n(self):
        return self.tau_n - 2.0 * self.mu_n

    @classmethod
    def from_rho(cls, mu_n, rho_n):
        return cls(mu_n, 2.0 * mu_n + rho_n)


@dataclass(frozen=True)
class BrSparsitySpec:
    """Sparsity scaling ``mu_n = -a log n + mu``, ``tau_n = -b log n + tau``.

    Only used to simulate: ``a``, ``b``, ``mu`` and ``tau`` cannot be recovered
    from a single network.
    """

    a: float
    b: float
    mu: float
    tau: float

    def __post_init__(self):
        for name in ("a", "b"):
            val = getattr(self, name)
            if not 0.0 < val < 2.0:
                raise ValidationError(f"sparsity index {name} must lie in (0, 2), got {val}")
        if not (math.isfinite(self.mu) and math.isfinite(self.tau)):
            raise ValidationError("mu and tau must be finite")

    @property
    def rho(self):
        return self.tau - 2.0 * self.mu

    def mu_n(self, n):
        return -self.a * math.log(n) + self.mu

    def tau_n(self, n):
        return -self.b * math.log(n) + self.tau

    def params(self, n):
        return BrParams(self.mu_n(n), self.tau_n(n))


@dataclass(frozen=True)
class BrFit:
    params: BrParams
    se_mu: float
    se_tau: float
    se_rho: float
    census: DyadCensus
    nll: float

    def ci(self, level=0.95):
        """Marginal Wald intervals ``{name: (lo, hi)}`` for mu_n, tau_n, rho_n."""
        z = normal_quantile(level)
        p = self.params
        return {
            "mu_n": (p.mu_n - z * self.se_mu, p.mu_n + z * self.se_mu),
            "tau_n": (p.tau_n - z * self.se_tau, p.tau_n + z * self.se_tau),
            "rho_n": (p.rho_n - z * self.se_rho, p.rho_n + z * self.se_rho),
        }

    def to_dict(self, level=0.95):
        cis = self.ci(level)
        p = self.params
        coords = []
        for name, est, se in (("mu_n", p.mu_n, self.se_mu), ("tau_n", p.tau_n, self.se_tau),
                              ("rho_n", p.rho_n, self.se_rho)):
            coords.append({"name": name, "estimate": est, "se": se, "z": est / se,
                           "ci_lower": cis[name][0], "ci_upper": cis[name][1]})
        return {"model": "br", "level": level, "coefficients": coords,
                "census": self.census.as_dict(), "nll": self.nll}

    @classmethod
    def from_dict(cls, doc):
        by_name = {c["name"]: c for c in doc["coefficients"]}
        return cls(
            params=BrParams(by_name["mu_n"]["estimate"], by_name["tau_n"]["estimate"]),
            se_mu=by_name["mu_n"]["se"],
            se_tau=by_name["tau_n"]["se"],
            se_rho=by_name["rho_n"]["se"],
            census=DyadCensus(**doc["census"]),
            nll=doc["nll"],
        )


def _log_normalizer(mu_n, tau_n):
    # log(1 + 2 e^mu + e^tau) without overflow
    return float(logsumexp([0.0, _LOG2 + mu_n, tau_n]))


def br_dyad_probabilities(p):
    """Probabilities of (0,0), (1,0), (0,1), (1,1) for every dyad."""
    logk = _log_normalizer(p.mu_n, p.tau_n)
    return np.exp(np.array([0.0, p.mu_n, p.mu_n, p.tau_n]) - logk)


def br_nll(census, p):
    """Negative log-likelihood ``D log k - mu_n d_asym - tau_n d_mut``."""
    mu_n, tau_n = p.mu_n, p.tau_n
    if mu_n == -math.inf and census.d_asym > 0 or tau_n == -math.inf and census.d_mut > 0:
        return math.inf
    return census.total * _log_normalizer(mu_n, tau_n) - mu_n * census.d_asym - tau_n * census.d_mut


def br_gradient(census, p, scaled=False):
    """Gradient of :func:`br_nll` in ``(mu_n, tau_n)``; ``scaled`` divides by n(n-1)/2."""
    probs = br_dyad_probabilities(p)
    D = census.total
    g = np.array([D * (probs[1] + probs[2]) - census.d_asym, D * probs[3] - census.d_mut])
    return g / D if scaled else g


def br_fit(census):
    """Closed-form MLE from the dyad census, with plug-in standard errors.

    Raises
    ------
    MleDoesNotExist
        If any configuration class (null, asymmetric, mutual) is empty.
    """
    for name, count in (("null", census.d_null), ("asymmetric", census.d_asym), ("mutual", census.d_mut)):
        if count == 0:
            raise MleDoesNotExist(name)
    mu_hat = math.log(census.d_asym / (2.0 * census.d_null))
    tau_hat = math.log(census.d_mut / census.d_null)
    params = BrParams(mu_hat, tau_hat)
    grad = br_gradient(census, params, scaled=True)
    if np.max(np.abs(grad)) >= 1e-10:
        raise NoConvergence(f"closed-form BR estimate is not stationary (|grad| = {np.max(np.abs(grad)):.3g})")
    se_mu, se_tau, se_rho = br_standard_errors(params, census.n)
    return BrFit(params, se_mu, se_tau, se_rho, census, br_nll(census, params))


def br_standard_errors(params, n):
    """Plug-in standard errors of ``(mu_n, tau_n, rho_n)``.

    From the limits ``n e^{mu/2} (mu_hat - mu) -> N(0, 1)``,
    ``n e^{tau/2} (tau_hat - tau) -> N(0, 2)`` and the matching ``rho_n`` form.
    """
    e_mu = math.exp(params.mu_n)
    e_tau = math.exp(2.0 * params.mu_n + params.rho_n)
    se_mu = 1.0 / (n * math.sqrt(e_mu))
    se_tau = math.sqrt(2.0) / (n * math.sqrt(e_tau))
    se_rho = math.sqrt(2.0 * e_mu + 4.0 * e_tau) / (n * math.sqrt(e_mu * e_tau))
    return se_mu, se_tau, se_rho


def br_sample(n, spec, seed):
    """Draw a BR graph with ``mu_n``, ``tau_n`` scaled by ``spec``.

    Dyad ``(i, j)`` uses the uniform keyed by ``(seed, i, j)``, so the result
    depends only on ``(seed, n, spec)``.
    """
    n = int(n)
    if n < 2:
        raise ValidationError(f"need at least 2 nodes, got {n}")
    probs = br_dyad_probabilities(spec.params(n))
    rows, cols = np.triu_indices(n, 1)
    cat = draw_categories(probs, dyad_uniforms(seed, rows, cols))
    return DirectedGraph.from_dyad_states(n, (cat == 1) | (cat == 3), (cat == 2) | (cat == 3))
