"""scikit-learn style estimators wrapping the functional fitting API.

``fit`` takes a :class:`~recipnet.graph.DirectedGraph` (and, for the p1.5
model, a :class:`~recipnet.graph.CovariateSet`) where scikit-learn would take
``X``; hyperparameters live in ``__init__`` so ``get_params``, ``set_params``
and ``clone`` behave as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .br import br_dyad_probabilities, br_fit, normal_quantile
from .exceptions import ValidationError
from .graph import CovariateSet, DirectedGraph, dyad_census, n_dyads
from .p15 import DyadDesign, p15_fit

__all__ = ["BernoulliReciprocity", "P15Model", "check_graph", "check_covariates"]


def check_graph(graph):
    if not isinstance(graph, DirectedGraph):
        raise ValidationError(f"expected a DirectedGraph, got {type(graph).__name__}")
    if graph.n < 2:
        raise ValidationError("graph needs at least 2 nodes")
    return graph


def check_covariates(covariates, graph):
    if not isinstance(covariates, CovariateSet):
        raise ValidationError(f"expected a CovariateSet, got {type(covariates).__name__}")
    if covariates.n != graph.n:
        raise ValidationError(f"covariates have {covariates.n} nodes, graph has {graph.n}")
    return covariates


def _check_level(level):
    normal_quantile(level)
    return level


class BernoulliReciprocity(BaseEstimator):
    """BR model fitted from the dyad census.

    Parameters
    ----------
    level : float, default=0.95
        Confidence level of the reported intervals.

    Attributes
    ----------
    census_ : DyadCensus
    params_ : BrParams
    se_ : ndarray of shape (3,)
        Standard errors of ``(mu_n, tau_n, rho_n)``.
    ci_ : ndarray of shape (3, 2)
    nll_ : float
    result_ : BrFit
    """

    def __init__(self, level=0.95):
        self.level = level

    def fit(self, graph, y=None):
        check_graph(graph)
        _check_level(self.level)
        self.census_ = dyad_census(graph)
        self.result_ = br_fit(self.census_)
        self.params_ = self.result_.params
        self.coef_ = np.array([self.params_.mu_n, self.params_.tau_n, self.params_.rho_n])
        self.se_ = np.array([self.result_.se_mu, self.result_.se_tau, self.result_.se_rho])
        self.ci_ = np.array(list(self.result_.ci(self.level).values()))
        self.nll_ = self.result_.nll
        self.n_nodes_ = graph.n
        return self

    def predict_proba(self, graph=None):
        """Configuration probabilities, one row per dyad (all rows are equal)."""
        check_is_fitted(self)
        n = self.n_nodes_ if graph is None else check_graph(graph).n
        return np.tile(br_dyad_probabilities(self.params_), (n_dyads(n), 1))

    def score(self, graph, y=None):
        """Mean log-likelihood per dyad."""
        from .br import br_nll

        check_is_fitted(self)
        census = dyad_census(check_graph(graph))
        return -br_nll(census, self.params_) / census.total

    def to_dict(self):
        check_is_fitted(self)
        return self.result_.to_dict(self.level)


class P15Model(BaseEstimator):
    """p1.5 model fitted by damped Newton with empirical-Hessian inference.

    Parameters
    ----------
    tol : float, default=1e-10
        Inf-norm tolerance on the gradient of the per-dyad objective.
    max_iter : int, default=200
    init : ParamVector or array-like, optional
        Starting point; defaults to the BR estimate with zero slopes.
    level : float, default=0.95
    check_conditioning : bool, default=True
        Warn when the covariate covariance is near-singular.
    workers : int, default=1
        Threads used to accumulate likelihood terms.

    Attributes
    ----------
    result_ : FitResult
    coef_ : ndarray, layout ``(mu_n, tau_n, gamma1, gamma2, delta)``
    se_, ci_, z_ : inference arrays (``None`` if the Hessian is singular)
    names_ : tuple of coordinate names
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, tol=1e-10, max_iter=200, init=None, level=0.95, check_conditioning=True, workers=1):
        self.tol = tol
        self.max_iter = max_iter
        self.init = init
        self.level = level
        self.check_conditioning = check_conditioning
        self.workers = workers

    def fit(self, graph, covariates):
        check_graph(graph)
        check_covariates(covariates, graph)
        _check_level(self.level)
        if self.tol <= 0 or int(self.max_iter) < 1:
            raise ValidationError("tol must be positive and max_iter at least 1")
        self.result_ = p15_fit(
            graph, covariates, tol=self.tol, max_iter=int(self.max_iter), init=self.init,
            level=self.level, workers=self.workers, check_conditioning=self.check_conditioning,
        )
        r = self.result_
        self.coef_ = r.estimates
        self.params_ = r.theta_hat
        self.se_, self.ci_, self.z_ = r.se, r.ci, r.z
        self.names_ = r.names
        self.n_iter_ = r.iterations
        self.converged_ = r.converged
        self.nll_ = r.nll
        self.feature_names_ = {
            "x": covariates.x_names, "y": covariates.y_names, "v": covariates.v_names,
        }
        return self

    def predict_proba(self, covariates, graph=None):
        """``(n(n-1)/2, 4)`` configuration probabilities over dyads ``i < j``."""
        check_is_fitted(self)
        graph = graph if graph is not None else DirectedGraph(covariates.n)
        design = DyadDesign(graph, check_covariates(covariates, graph))
        return design.probabilities(self.coef_)

    def score(self, graph, covariates):
        """Mean log-likelihood per dyad."""
        check_is_fitted(self)
        design = DyadDesign(check_graph(graph), check_covariates(covariates, graph))
        return -design.evaluate(self.coef_, order=0) / design.n_dyads

    def to_dict(self):
        check_is_fitted(self)
        return self.result_.to_dict()
