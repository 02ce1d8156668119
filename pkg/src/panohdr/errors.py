"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, DataError and
DomainError exit 2, NumericalError exits 3.
"""


class PanohdrError(Exception):
    pass


class DomainError(PanohdrError, ValueError):
    """Input values outside an operation's mathematical domain."""


class DataError(PanohdrError):
    """Malformed or inconsistent files, manifests, or configs."""


class NumericalError(PanohdrError):
    """Numerical failure at runtime (NaN loss, divergence, degenerate scene)."""
