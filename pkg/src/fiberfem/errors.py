"""Exception hierarchy for the package.

Every error raised by the library derives from :class:`FiberFemError`, so
callers (notably the CLI) can map failure classes to exit codes without
pattern matching on messages.
"""

from __future__ import annotations


class FiberFemError(Exception):
    """Base class for all package errors."""


class ConfigError(FiberFemError):
    """Malformed run configuration; carries a section/field diagnostic."""

    def __init__(self, message, *, section=None, field=None, line=None):
        loc = ""
        if section is not None:
            loc = f"[{section}]"
            if field is not None:
                loc += f" {field}"
        if line is not None:
            loc += f" (line {line})"
        if loc:
            message = f"{loc}: {message}"
        super().__init__(message)
        self.section = section
        self.field = field
        self.line = line


class EvaluationError(FiberFemError):
    """A pointwise evaluation produced a non-finite value."""


class ResonanceError(FiberFemError):
    """An eigenvalue sits within the safety margin of an interval endpoint."""


class InsufficientSpectrumError(FiberFemError):
    """Not enough eigenvalues were computed to certify the index set."""


class DegenerateSpectrumError(FiberFemError):
    """A numerically repeated eigenvalue was requested; not supported."""


class EigenConvergenceError(FiberFemError):
    """Eigenvalue iteration failed to converge.

    ``residual_history`` holds the per-sweep worst relative residual so the
    failure can be diagnosed.
    """

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class SingularOperatorError(FiberFemError):
    """A linear operator that should be invertible is numerically singular."""

    def __init__(self, message, cond_estimate=None):
        if cond_estimate is not None:
            message = f"{message} (condition estimate {cond_estimate:.3e})"
        super().__init__(message)
        self.cond_estimate = cond_estimate


class NewtonError(FiberFemError):
    """A Newton iteration failed; ``report`` holds the partial history."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class BisectionError(FiberFemError):
    """Root bracketing on a fiber trace stagnated."""

    def __init__(self, message, bracket=None):
        if bracket is not None:
            message = f"{message} (bracket {bracket[0]:.6g}..{bracket[1]:.6g})"
        super().__init__(message)
        self.bracket = bracket


class TraceError(FiberFemError):
    """A fiber trace aborted; ``partial_trace`` holds the samples so far."""

    def __init__(self, message, partial_trace=None):
        super().__init__(message)
        self.partial_trace = partial_trace
