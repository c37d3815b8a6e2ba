"""Exception types shared across the package."""


class PathFLError(Exception):
    """Base class for all package errors."""


class ShapeError(PathFLError, ValueError):
    """Tensor dimensions are incompatible with the requested operation."""


class ValidationError(PathFLError, ValueError):
    """An argument or configuration value is outside its allowed domain."""


class GraphStateError(PathFLError, RuntimeError):
    """The differentiation graph was used out of order (e.g. backward before forward)."""


class NumericError(PathFLError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class FormatError(PathFLError, ValueError):
    """A file on disk is malformed or truncated."""


class NoForeignStyle(PathFLError, LookupError):
    """The style pool holds no entry from another client."""
