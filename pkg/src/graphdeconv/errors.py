"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: parameter/usage problems exit 1,
data problems exit 2, numerical failures exit 3.
"""


class GraphDeconvError(Exception):
    """Base class for all graphdeconv errors."""


class ParameterError(GraphDeconvError):
    """A configuration value or argument is out of its allowed range."""


class DataError(GraphDeconvError):
    """Input data violates a domain requirement (zero rows, negative
    entries, malformed files, ...)."""


class NumericError(GraphDeconvError):
    """A numerical routine failed (singular solve, eigensolver breakdown,
    non-finite iterates)."""


class ClusteringError(NumericError):
    """Clustering degenerated (empty cluster, collapsed embedding)."""
