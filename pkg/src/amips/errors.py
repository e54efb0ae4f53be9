"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: FormatError and DataError are exit 2,
NumericError is exit 3. Anything else is a bug.
"""


class AmipsError(Exception):
    """Base class for package errors."""


class FormatError(AmipsError):
    """A binary or text artifact does not match its declared layout."""


class DataError(AmipsError):
    """Inputs are structurally valid but unusable (degenerate rows, dim
    mismatches, empty subsets, conflicting locks)."""


class NumericError(AmipsError):
    """A computation produced non-finite values."""
