"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, DataError 2,
NumericError 3.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, manifests, covariates)."""


class NumericError(ArithmeticError):
    """Non-finite values encountered during training or evaluation."""
