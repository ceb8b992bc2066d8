"""Exception hierarchy shared by every module."""


class RecipnetError(Exception):
    """Base class for all package errors."""


class ValidationError(RecipnetError, ValueError):
    """Invalid user input: malformed files, out-of-range parameters, misaligned data."""


class ParseError(ValidationError):
    """A delimited text file could not be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class ModelError(RecipnetError):
    """The model could not be estimated on the given data."""


class MleDoesNotExist(ModelError):
    """The likelihood has no interior maximizer (boundary solution).

    ``config`` names the offending dyad configuration class or coordinate.
    """

    def __init__(self, config, message=None):
        self.config = config
        super().__init__(message or f"MLE does not exist: no {config} dyads observed")


class NoConvergence(ModelError):
    """The optimizer stopped without meeting its tolerance."""


class InferenceUnavailable(ModelError):
    """Standard errors cannot be computed (singular or indefinite Hessian)."""
