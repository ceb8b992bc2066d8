"""Sparse directed-network models with reciprocity.

The Bernoulli model with reciprocity (BR) and its covariate extension, the
p1.5 model: maximum-likelihood fitting, sparsity-agnostic Wald inference and
Monte-Carlo studies of both.
"""

__version__ = "0.1.0"

from .br import BrFit, BrParams, BrSparsitySpec, br_fit, br_nll, br_sample, br_standard_errors
from .estimators import BernoulliReciprocity, P15Model
from .exceptions import (InferenceUnavailable, MleDoesNotExist, ModelError, NoConvergence, ParseError,
                         RecipnetError, ValidationError)
from .graph import (CovariateSet, DirectedGraph, DyadCensus, check_covariate_conditioning, dyad_census,
                    load_covariates, load_edge_list, write_edge_list)
from .p15 import (FitResult, ParamVector, dyad_probabilities, p15_fit, p15_gradient, p15_hessian,
                  p15_inference, p15_nll, p15_sample, sufficient_statistics)

__all__ = [
    "BernoulliReciprocity", "P15Model",
    "DirectedGraph", "DyadCensus", "CovariateSet", "dyad_census", "load_edge_list", "write_edge_list",
    "load_covariates", "check_covariate_conditioning",
    "BrParams", "BrSparsitySpec", "BrFit", "br_nll", "br_fit", "br_standard_errors", "br_sample",
    "ParamVector", "FitResult", "dyad_probabilities", "sufficient_statistics", "p15_nll", "p15_gradient",
    "p15_hessian", "p15_fit", "p15_inference", "p15_sample",
    "RecipnetError", "ValidationError", "ParseError", "ModelError", "MleDoesNotExist", "NoConvergence",
    "InferenceUnavailable",
]
