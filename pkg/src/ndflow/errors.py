"""Exception hierarchy shared by all ndflow modules.

Each class carries a short machine-readable ``kind`` used by the CLI when
reporting errors as JSON and when selecting exit codes.
"""


class NdflowError(Exception):
    """Base class for all errors raised by this package."""

    kind = "error"
    exit_code = 1


class InvalidInputError(NdflowError):
    """Input data or configuration violates a documented precondition."""

    kind = "invalid-input"
    exit_code = 2


class NumericalError(NdflowError):
    """A computation failed numerically (non-finite values, failed fit,
    non-monotone integration output, ...)."""

    kind = "numerical"
    exit_code = 3

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
