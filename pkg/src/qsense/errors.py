"""Exception hierarchy shared across the library."""


class QsenseError(Exception):
    """Base class for all library errors."""


class DomainError(QsenseError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NotSpdError(QsenseError):
    """A matrix that must be symmetric positive definite is not."""


class ConvergenceError(QsenseError):
    """An iterative routine failed to converge; carries the last iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class DivergenceError(QsenseError):
    """A quantity diverges for the requested operating point."""


class UnsupportedConfigError(QsenseError):
    """The requested operation does not apply to this channel/receiver setup."""


class CandidateRejectedError(QsenseError):
    """A bound candidate was rejected (its weighting matrix is not SPD)."""


class SolverError(QsenseError):
    """A numerical solver failed on every attempted start."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConfigError(QsenseError):
    """A configuration file is malformed; carries a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
