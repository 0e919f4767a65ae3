"""Semantic exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration/usage problems exit
with 2, bad data with 3, numerical failures with 4.
"""


class CountGlassoError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CountGlassoError, ValueError):
    """Inputs violate a contract (shape, domain, symmetry, ...)."""


class ConfigError(CountGlassoError):
    """Invalid configuration: missing columns, bad flag combinations."""


class DataError(CountGlassoError):
    """File content is unusable: negative counts, zero valid rows, ..."""


class NumericError(CountGlassoError):
    """Numerical failure: Newton non-convergence, singular or non-PD matrix."""
