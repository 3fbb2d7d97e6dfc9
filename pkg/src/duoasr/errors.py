"""Exception types shared across the package.

The CLI maps these to exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (manifests, feature files, checkpoints)."""


class NumericError(FloatingPointError):
    """A NaN or Inf showed up in a forward or backward pass."""
