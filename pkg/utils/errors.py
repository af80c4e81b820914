"""
Exception hierarchy for CFS Planner.

Every error raised by the library derives from ``CfsError`` and from the builtin
exception closest in meaning, so callers may catch either.
"""

from pathlib import Path
from typing import Optional, Union


class CfsError(Exception):
    """Base class for all planner errors."""


class DegenerateInput(CfsError, ValueError):
    """Geometry input has no 2D extent (e.g. all points collinear)."""


class CorrespondenceError(CfsError, ValueError):
    """A notch correspondence lookup failed for a hull boundary point."""


class EmptySubdifferential(CfsError, ValueError):
    """Nearest-feature enumeration produced no nonzero generator."""


class EmptyCone(CfsError, ValueError):
    """No feasible search direction exists at a waypoint."""


class EmptyFeasibleSubgradients(CfsError, ValueError):
    """The steepest-direction filter removed every sub-gradient."""


class DimensionMismatch(CfsError, ValueError):
    """Vector or matrix sizes disagree with the problem dimension."""


class Infeasible(CfsError, RuntimeError):
    """A convex feasible set has empty interior."""

    def __init__(self, message: str, max_violation: float = float('nan')):
        super().__init__(message)
        self.max_violation = max_violation


class NumericalFailure(CfsError, RuntimeError):
    """Newton iteration could not make progress."""


class _LocatedError(CfsError, ValueError):
    def __init__(self, reason: str, path: Union[str, Path, None] = None, line: Optional[int] = None):
        self.reason = reason
        self.path = str(path) if path is not None else None
        self.line = line
        location = self.path or '<scenario>'
        if line is not None:
            location = f"{location}:{line}"
        super().__init__(f"{location}: {reason}")


class ParseError(_LocatedError):
    """Scenario file is not valid JSON or misses required fields."""


class ValidationError(_LocatedError):
    """Scenario content violates a modelling rule."""


class IoError(CfsError, OSError):
    """Report emission failed."""
