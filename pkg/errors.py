"""
Exception hierarchy for the h-stability laboratory.

Every error carries the process exit code the command line reports for it.
"""

from typing import Any, Dict, Optional


class HStableError(Exception):
    """Base class for all laboratory errors."""

    exit_code = 1

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParameterError(HStableError):
    """Invalid user or caller supplied parameters."""

    exit_code = 2


class DomainError(ParameterError):
    """Query outside the region where a functional is defined (e.g. empty t-interval)."""


class SolverError(HStableError):
    """A numerical solver failed to produce a certified answer."""

    exit_code = 3


class BracketError(SolverError):
    """A root or maximum could not be bracketed."""


class QuadratureError(SolverError):
    """Adaptive quadrature did not reach the requested tolerance."""


class RangeError(SolverError):
    """A result is not representable in double precision."""


class NoRootsError(SolverError):
    """The requested roots do not exist for these parameters."""


class NotFoundError(SolverError):
    """A transition indicator never changed sign inside its bracket."""


class OracleSizeError(HStableError):
    """Exhaustive enumeration refused because the instance is too large."""

    exit_code = 4
