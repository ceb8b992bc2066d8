"""The p1.5 model: BR with covariate effects on outgoingness, incomingness and reciprocity.

For a dyad ``i < j`` the configurations (0,0), (1,0), (0,1), (1,1) have
probabilities proportional to ``1, exp(f1), exp(f2), exp(f3)`` with::

    f1 = mu_n + X_i.gamma1 + Y_j.gamma2
    f2 = mu_n + X_j.gamma1 + Y_i.gamma2
    f3 = tau_n + (X_i + X_j).gamma1 + (Y_i + Y_j).gamma2 + V_ij.delta

Every ``f`` is linear in ``theta = (mu_n, tau_n, gamma1, gamma2, delta)``, so
the model is a per-dyad exponential family: ``f_c = theta . T_c`` with design
rows ``T_1 = (1, 0, X_i, Y_j, 0)``, ``T_2 = (1, 0, X_j, Y_i, 0)`` and
``T_3 = (0, 1, X_i + X_j, Y_i + Y_j, V_ij)``. The gradient of the negative
log-likelihood is ``sum E[T] - t`` and its Hessian is ``sum Cov[T]``.

Parameter layout is ``(mu_n, tau_n, gamma1, gamma2, delta)`` throughout. The
conventional ordering ``(mu_n, gamma1, gamma2, tau_n, delta)`` is recovered by
:data:`LITERATURE_ORDER`.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from ._rng import draw_categories, dyad_uniforms
from .br import BrSparsitySpec, br_fit, normal_quantile
from .exceptions import InferenceUnavailable, MleDoesNotExist, NoConvergence, ValidationError
from .graph import DirectedGraph, check_covariate_conditioning, dyad_census

__all__ = [
    "ParamVector",
    "DyadLinearPredictors",
    "SufficientStats",
    "DyadDesign",
    "FitResult",
    "Inference",
    "param_names",
    "literature_order",
    "linear_predictors",
    "dyad_probabilities",
    "sufficient_statistics",
    "p15_nll",
    "p15_gradient",
    "p15_hessian",
    "p15_fit",
    "p15_inference",
    "p15_sample",
]

BLOCK_SIZE = 1 << 15
DIVERGENCE_BOUND = 50.0
MAX_HALVINGS = 30
STEP_TOL = 1e-3


def param_names(d1, d2, d3):
    def block(prefix, d):
        return [prefix] if d == 1 else [f"{prefix}_{k + 1}" for k in range(d)]

    return ["mu_n", "tau_n", *block("gamma1", d1), *block("gamma2", d2), *block("delta", d3)]


def literature_order(d1, d2, d3):
    """Permutation taking this package's layout to ``(mu_n, gamma1, gamma2, tau_n, delta)``."""
    g = list(range(2, 2 + d1 + d2))
    return np.array([0, *g, 1, *range(2 + d1 + d2, 2 + d1 + d2 + d3)])


@dataclass(frozen=True)
class ParamVector:
    mu_n: float
    tau_n: float
    gamma1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "delta"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not np.all(np.isfinite(self.to_array())):
            raise ValidationError("parameters must be finite")

    @property
    def dims(self):
        return self.gamma1.size, self.gamma2.size, self.delta.size

    @property
    def rho_n(self):
        return self.tau_n - 2.0 * self.mu_n

    @property
    def eta(self):
        return np.concatenate([self.gamma1, self.gamma2])

    def to_array(self):
        return np.concatenate([[self.mu_n, self.tau_n], self.gamma1, self.gamma2, self.delta])

    @classmethod
    def from_array(cls, theta, d1, d2, d3):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (2 + d1 + d2 + d3,):
            raise ValidationError(f"expected {2 + d1 + d2 + d3} parameters, got shape {theta.shape}")
        return cls(float(theta[0]), float(theta[1]), theta[2:2 + d1].copy(),
                   theta[2 + d1:2 + d1 + d2].copy(), theta[2 + d1 + d2:].copy())

    @classmethod
    def zeros(cls, d1=0, d2=0, d3=0):
        return cls(0.0, 0.0, np.zeros(d1), np.zeros(d2), np.zeros(d3))


class DyadLinearPredictors(NamedTuple):
    f1: float
    f2: float
    f3: float
    k: float


def _predictors(p, x_i, x_j, y_i, y_j, v_ij):
    x_i, x_j, y_i, y_j, v_ij = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x_i, x_j, y_i, y_j, v_ij))
    xg_i, xg_j = float(x_i @ p.gamma1), float(x_j @ p.gamma1)
    yg_i, yg_j = float(y_i @ p.gamma2), float(y_j @ p.gamma2)
    f1 = p.mu_n + xg_i + yg_j
    f2 = p.mu_n + xg_j + yg_i
    f3 = p.tau_n + xg_i + xg_j + yg_i + yg_j + float(v_ij @ p.delta)
    return f1, f2, f3


def linear_predictors(p, x_i, x_j, y_i, y_j, v_ij):
    """``f1, f2, f3`` and the normalizer ``k`` (``inf`` if it overflows)."""
    f1, f2, f3 = _predictors(p, x_i, x_j, y_i, y_j, v_ij)
    with np.errstate(over="ignore"):
        k = float(np.exp(logsumexp([0.0, f1, f2, f3])))
    return DyadLinearPredictors(f1, f2, f3, k)


def dyad_probabilities(p, x_i, x_j, y_i, y_j, v_ij):
    """Probabilities of (0,0), (1,0), (0,1), (1,1) for one dyad."""
    logits = np.array([0.0, *_predictors(p, x_i, x_j, y_i, y_j, v_ij)])
    return np.exp(logits - logsumexp(logits))


@dataclass(frozen=True)
class SufficientStats:
    t: np.ndarray
    dims: tuple

    @property
    def d_asym(self):
        return self.t[0]

    @property
    def d_mut(self):
        return self.t[1]


class DyadDesign:
    """Per-dyad design rows ``T_1, T_2, T_3`` and observed statistics for one data set.

    Building the design once lets the optimizer evaluate nll, gradient and
    Hessian without re-gathering covariates. Accumulation runs over fixed
    blocks of dyads and partial sums are combined by pairwise tree reduction,
    so results do not depend on ``workers``.
    """

    def __init__(self, g, cov, workers=1):
        if cov.n != g.n:
            raise ValidationError(f"covariates have {cov.n} nodes, graph has {g.n}")
        self.n = g.n
        self.dims = (cov.d1, cov.d2, cov.d3)
        self.workers = max(1, int(workers))
        rows, cols, a_ij, a_ji = g.dyad_states()
        D = rows.size
        p = 2 + sum(self.dims)
        one, zero = np.ones((D, 1)), np.zeros((D, 1))
        X, Y, V = cov.X, cov.Y, cov.V
        d3zero = np.zeros((D, cov.d3))
        self.T = np.stack([
            np.hstack([one, zero, X[rows], Y[cols], d3zero]),
            np.hstack([one, zero, X[cols], Y[rows], d3zero]),
            np.hstack([zero, one, X[rows] + X[cols], Y[rows] + Y[cols], V]),
        ])  # (3, D, p)
        self.n_params = p
        obs = np.zeros(D, dtype=np.int8)
        obs[a_ij & ~a_ji] = 1
        obs[~a_ij & a_ji] = 2
        obs[a_ij & a_ji] = 3
        self.obs = obs
        t = np.zeros(p)
        for c in (1, 2, 3):
            t += self.T[c - 1][obs == c].sum(axis=0)
        self.t = t
        self._blocks = [slice(s, min(s + BLOCK_SIZE, D)) for s in range(0, D, BLOCK_SIZE)]

    @property
    def n_dyads(self):
        return self.T.shape[1]

    def _block(self, theta, sl, order):
        T = self.T[:, sl, :]
        F = T @ theta  # (3, B)
        logk = np.logaddexp(0.0, logsumexp(F, axis=0))
        out = [logk.sum()]
        if order >= 1:
            P = np.exp(F - logk)  # (3, B)
            M = P[0][:, None] * T[0] + P[1][:, None] * T[1] + P[2][:, None] * T[2]
            out.append(M.sum(axis=0))
            if order >= 2:
                H = sum((T[c].T * P[c]) @ T[c] for c in range(3)) - M.T @ M
                out.append(H)
        return out

    def evaluate(self, theta, order=2):
        """Return ``nll`` and, for ``order >= 1`` / ``2``, gradient and Hessian."""
        theta = np.asarray(theta, dtype=float)
        if self.workers > 1 and len(self._blocks) > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                parts = list(ex.map(lambda sl: self._block(theta, sl, order), self._blocks))
        else:
            parts = [self._block(theta, sl, order) for sl in self._blocks]
        if not parts:
            parts = [[0.0, np.zeros(self.n_params), np.zeros((self.n_params,) * 2)][:order + 1]]
        summed = [_tree_sum([p[k] for p in parts]) for k in range(order + 1)]
        nll = float(summed[0] - theta @ self.t)
        if order == 0:
            return nll
        grad = summed[1] - self.t
        if order == 1:
            return nll, grad
        H = summed[2]
        return nll, grad, 0.5 * (H + H.T)

    def probabilities(self, theta):
        """``(D, 4)`` configuration probabilities at ``theta``."""
        F = self.T @ np.asarray(theta, dtype=float)
        logits = np.vstack([np.zeros(F.shape[1]), F]).T
        return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def _tree_sum(items):
    items = list(items)
    while len(items) > 1:
        nxt = [items[k] + items[k + 1] for k in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def _theta(p, cov):
    d = (cov.d1, cov.d2, cov.d3)
    if p.dims != d:
        raise ValidationError(f"parameter dimensions {p.dims} do not match covariates {d}")
    return p.to_array()


def sufficient_statistics(g, cov):
    """Observed totals whose inner product with ``theta`` enters the likelihood."""
    design = DyadDesign(g, cov)
    return SufficientStats(design.t, design.dims)


def p15_nll(p, g, cov, workers=1):
    """Negative log-likelihood ``sum_{i<j} log k_ij - <theta, t>``."""
    return DyadDesign(g, cov, workers).evaluate(_theta(p, cov), order=0)


def p15_gradient(p, g, cov, workers=1):
    return DyadDesign(g, cov, workers).evaluate(_theta(p, cov), order=1)[1]


def p15_hessian(p, g, cov, workers=1):
    return DyadDesign(g, cov, workers).evaluate(_theta(p, cov), order=2)[2]


@dataclass
class Inference:
    se: np.ndarray
    z: np.ndarray
    ci: np.ndarray  # (p, 2)
    se_rho: float
    ci_rho: tuple
    level: float


@dataclass
class FitResult:
    """Outcome of :func:`p15_fit`.

    ``hessian_scaled`` is the Hessian of the negative log-likelihood divided by
    ``n(n-1)/2``. ``se``/``ci`` are ``None`` when the Hessian is singular.
    """

    theta_hat: ParamVector
    nll: float
    grad_norm: float
    hessian_scaled: np.ndarray
    n: int
    iterations: int
    converged: bool
    names: tuple
    level: float = 0.95
    se: np.ndarray = None
    z: np.ndarray = None
    ci: np.ndarray = None
    se_rho: float = None
    ci_rho: tuple = None

    @property
    def estimates(self):
        return self.theta_hat.to_array()

    @property
    def condition_number(self):
        eig = np.linalg.eigvalsh(self.hessian_scaled)
        return float(eig[-1] / eig[0]) if eig[0] > 0 else math.inf

    def to_dict(self):
        est = self.estimates
        coords = []
        for k, name in enumerate(self.names):
            row = {"name": name, "estimate": float(est[k])}
            if self.se is not None:
                row.update(se=float(self.se[k]), z=float(self.z[k]),
                           ci_lower=float(self.ci[k, 0]), ci_upper=float(self.ci[k, 1]))
            coords.append(row)
        rho = {"name": "rho_n", "estimate": self.theta_hat.rho_n}
        if self.se_rho is not None:
            rho.update(se=self.se_rho, z=self.theta_hat.rho_n / self.se_rho,
                       ci_lower=self.ci_rho[0], ci_upper=self.ci_rho[1])
        cond = self.condition_number
        return {
            "model": "p15",
            "n": self.n,
            "dims": list(self.theta_hat.dims),
            "level": self.level,
            "coefficients": coords,
            "derived": [rho],
            "nll": self.nll,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "hessian_condition_number": cond if math.isfinite(cond) else None,
            "hessian_scaled": self.hessian_scaled.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        d1, d2, d3 = doc["dims"]
        coords = doc["coefficients"]
        theta = ParamVector.from_array([c["estimate"] for c in coords], d1, d2, d3)
        has_se = all("se" in c for c in coords)
        rho = doc["derived"][0]
        return cls(
            theta_hat=theta,
            nll=doc["nll"],
            grad_norm=doc["grad_norm"],
            hessian_scaled=np.array(doc["hessian_scaled"], dtype=float),
            n=doc["n"],
            iterations=doc["iterations"],
            converged=doc["converged"],
            names=tuple(c["name"] for c in coords),
            level=doc["level"],
            se=np.array([c["se"] for c in coords]) if has_se else None,
            z=np.array([c["z"] for c in coords]) if has_se else None,
            ci=np.array([[c["ci_lower"], c["ci_upper"]] for c in coords]) if has_se else None,
            se_rho=rho.get("se"),
            ci_rho=(rho["ci_lower"], rho["ci_upper"]) if "se" in rho else None,
        )


def _newton(design, theta0, tol, max_iter):
    D = design.n_dyads
    theta = np.array(theta0, dtype=float)
    f, g, H = (v / D for v in design.evaluate(theta))
    eye = np.eye(theta.size)
    for it in range(max_iter + 1):
        small_grad = np.max(np.abs(g), initial=0.0) < tol
        shift = 0.0
        while True:
            try:
                L = np.linalg.cholesky(H + shift * eye)
                break
            except np.linalg.LinAlgError:
                shift = 1e-8 if shift == 0.0 else shift * 10.0
                if shift > 1e8:
                    raise NoConvergence("Hessian could not be regularized") from None
        step = -np.linalg.solve(L.T, np.linalg.solve(L, g))
        # a tiny gradient with an O(1) Newton step means a flat ridge towards the
        # boundary rather than an interior optimum
        if small_grad and np.max(np.abs(step)) <= STEP_TOL * (1.0 + np.max(np.abs(theta))):
            return theta, f, g, H, it, True
        if it == max_iter:
            break
        slope = float(g @ step)
        slack = 16.0 * np.finfo(float).eps * max(1.0, abs(f))
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + t * step
            f_new = design.evaluate(cand, order=0) / D
            if math.isfinite(f_new) and f_new <= f + 1e-4 * t * slope + slack:
                break
            t *= 0.5
        else:
            if small_grad:
                return theta, f, g, H, it, True
            raise NoConvergence(f"line search failed at iteration {it} (|grad| = {np.max(np.abs(g)):.3g})")
        theta = cand
        if np.any(np.abs(theta) > DIVERGENCE_BOUND) and f_new <= f:
            k = int(np.argmax(np.abs(theta)))
            raise MleDoesNotExist(f"coordinate {k}", f"MLE does not exist: coordinate {k} diverges "
                                  f"(|theta_k| = {abs(theta[k]):.1f} > {DIVERGENCE_BOUND:g})")
        f, g, H = (v / D for v in design.evaluate(theta))
    return theta, f, g, H, max_iter, False


def p15_fit(g, cov, tol=1e-10, max_iter=200, init=None, level=0.95, workers=1,
            check_conditioning=True, raise_on_failure=True):
    """Maximum-likelihood fit by damped Newton on the ``n(n-1)/2``-scaled objective.

    Newton steps solve ``H s = -grad``; a diagonal shift (from 1e-8, x10) is
    added whenever ``H`` is not positive definite, and steps are halved (up to
    30 times) until the objective decreases. Converged when the scaled
    gradient's inf-norm is below ``tol`` and the Newton step is small; a small
    gradient with a large step is a ridge towards the boundary, so iteration
    continues until the divergence bound is hit. The default start is the closed-form
    BR estimate with zero covariate effects.

    Raises
    ------
    MleDoesNotExist
        If a configuration class is empty or a coordinate drifts past 50.
    NoConvergence
        After ``max_iter`` iterations without meeting ``tol`` (unless
        ``raise_on_failure=False``, which returns the last iterate instead).
    """
    census = dyad_census(g)
    for name, count in (("null", census.d_null), ("asymmetric", census.d_asym), ("mutual", census.d_mut)):
        if count == 0:
            raise MleDoesNotExist(name)
    if check_conditioning:
        check_covariate_conditioning(cov, g, warn=True)
    d1, d2, d3 = cov.d1, cov.d2, cov.d3
    if init is None:
        br = br_fit(census).params
        theta0 = np.concatenate([[br.mu_n, br.tau_n], np.zeros(d1 + d2 + d3)])
    else:
        theta0 = init.to_array() if isinstance(init, ParamVector) else np.asarray(init, dtype=float)
        if theta0.shape != (2 + d1 + d2 + d3,):
            raise ValidationError(f"init must have {2 + d1 + d2 + d3} entries")
    design = DyadDesign(g, cov, workers)
    theta, f, grad, H, iters, converged = _newton(design, theta0, tol, max_iter)
    if not converged and raise_on_failure:
        raise NoConvergence(f"no convergence after {max_iter} iterations (|grad| = {np.max(np.abs(grad)):.3g})")
    fit = FitResult(
        theta_hat=ParamVector.from_array(theta, d1, d2, d3),
        nll=f * design.n_dyads,
        grad_norm=float(np.max(np.abs(grad), initial=0.0)),
        hessian_scaled=H,
        n=g.n,
        iterations=iters,
        converged=converged,
        names=tuple(param_names(d1, d2, d3)),
        level=level,
    )
    try:
        inf = p15_inference(fit, level=level)
    except InferenceUnavailable as exc:
        warnings.warn(str(exc), RuntimeWarning, stacklevel=2)
    else:
        fit.se, fit.z, fit.ci, fit.se_rho, fit.ci_rho = inf.se, inf.z, inf.ci, inf.se_rho, inf.ci_rho
    return fit


def p15_inference(fit, n=None, level=0.95):
    """Wald inference from the scaled empirical Hessian.

    ``se_k = sqrt(2 (H^-1)_kk) / n`` for every coordinate. ``rho_n = tau_n - 2 mu_n``
    gets a delta-method standard error from the same inverse.
    """
    n = fit.n if n is None else n
    H = np.asarray(fit.hessian_scaled, dtype=float)
    if not np.all(np.isfinite(H)):
        raise InferenceUnavailable("Hessian has non-finite entries")
    eig = np.linalg.eigvalsh(H)
    if eig[-1] <= 0 or eig[0] <= 1e-12 * eig[-1]:
        raise InferenceUnavailable(
            f"Hessian is singular or indefinite (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g}); inference unavailable"
        )
    H_inv = np.linalg.inv(H)
    cov = 2.0 * H_inv / n ** 2
    se = np.sqrt(np.diag(cov))
    est = fit.theta_hat.to_array()
    z_crit = normal_quantile(level)
    ci = np.column_stack([est - z_crit * se, est + z_crit * se])
    grad_rho = np.zeros(est.size)
    grad_rho[0], grad_rho[1] = -2.0, 1.0
    se_rho = float(math.sqrt(grad_rho @ cov @ grad_rho))
    rho = fit.theta_hat.rho_n
    return Inference(se, est / se, ci, se_rho, (rho - z_crit * se_rho, rho + z_crit * se_rho), level)


def _sampling_probabilities(n, spec, gamma1, gamma2, delta, cov):
    p = ParamVector(spec.mu_n(n), spec.tau_n(n), gamma1, gamma2, delta)
    _theta(p, cov)
    rows, cols = np.triu_indices(n, 1)
    xg, yg = cov.X @ p.gamma1, cov.Y @ p.gamma2
    F = np.column_stack([
        np.zeros(rows.size),
        p.mu_n + xg[rows] + yg[cols],
        p.mu_n + xg[cols] + yg[rows],
        p.tau_n + xg[rows] + xg[cols] + yg[rows] + yg[cols] + cov.V @ p.delta,
    ])
    return rows, cols, np.exp(F - logsumexp(F, axis=1, keepdims=True))


def p15_sample(n, spec, gamma1, gamma2, delta, cov, seed):
    """Draw a graph given covariates, with ``mu_n = -a log n + mu``, ``tau_n = -b log n + tau``.

    Dyad ``(i, j)`` uses the uniform keyed by ``(seed, i, j)``.
    """
    if not isinstance(spec, BrSparsitySpec):
        spec = BrSparsitySpec(**spec)
    n = int(n)
    if n < 2:
        raise ValidationError(f"need at least 2 nodes, got {n}")
    if cov.n != n:
        raise ValidationError(f"covariates have {cov.n} nodes, expected {n}")
    rows, cols, probs = _sampling_probabilities(n, spec, gamma1, gamma2, delta, cov)
    cat = draw_categories(probs, dyad_uniforms(seed, rows, cols))
    return DirectedGraph.from_dyad_states(n, (cat == 1) | (cat == 3), (cat == 2) | (cat == 3))
