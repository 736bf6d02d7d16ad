"""Exception types shared across the package."""


class ElastlabError(Exception):
    """Base class for all package errors."""


class ShapeError(ElastlabError, ValueError):
    """Input has the wrong shape or lacks a required structure (square, symmetric)."""


class SingularityError(ElastlabError, ArithmeticError):
    """A matrix that must be positive definite is not."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ParameterError(ElastlabError, ValueError):
    """A parameter violates a construction invariant."""


class ContractError(ElastlabError, ValueError):
    """A caller-supplied function broke its contract (e.g. non-probability output)."""


class ConfigError(ElastlabError):
    """Experiment configuration is malformed. ``location`` names the offending field."""

    def __init__(self, location, message):
        super().__init__(f"{location}: {message}")
        self.location = location
        self.message = message


class NumericFailure(ElastlabError):
    """An experiment produced no usable numbers (divergence, undefined everywhere)."""
