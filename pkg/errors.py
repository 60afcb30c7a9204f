"""
Exception hierarchy for kmsgraph.
Every error carries the exit code the CLI reports for it.
"""


class KmsGraphError(Exception):
    """Base class for all kmsgraph errors."""

    exit_code = 1


class GraphParseError(KmsGraphError, ValueError):
    """Graph document is malformed, fails the schema, or is inconsistent."""

    exit_code = 2


class AdmissibilityError(KmsGraphError, ValueError):
    """An inverse temperature, epsilon or measure is outside an operation's domain."""

    exit_code = 3


class ReducibleMatrixError(AdmissibilityError):
    """A Perron vector was requested for a reducible matrix."""


class BasisLimitError(KmsGraphError, ValueError):
    """Truncated path space would exceed the configured basis cap."""

    exit_code = 3


class ConvergenceError(KmsGraphError, RuntimeError):
    """Power iteration did not converge within the iteration budget."""

    exit_code = 1


class VerificationError(KmsGraphError, RuntimeError):
    """A verification report contains failed checks."""

    exit_code = 4
