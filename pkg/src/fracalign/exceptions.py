"""Exception types raised by fracalign."""


class FracAlignError(Exception):
    """Base class for all library errors."""


class ValidationError(FracAlignError, ValueError):
    """An input violates a documented precondition."""


class CapacityError(FracAlignError, ValueError):
    """A symbol-space enumeration would exceed the configured cap."""


class ConditioningError(FracAlignError, ArithmeticError):
    """A matrix that must be inverted is numerically singular."""


class InfeasibleError(FracAlignError, ValueError):
    """A construction cannot be realized for the requested dimensions."""


class SelectionError(FracAlignError, ValueError):
    """An invalid column selection was requested."""


class DegenerateDistanceError(FracAlignError, ArithmeticError):
    """A pairwise distance is zero where the objective needs it positive."""
