"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class WindowError(ValueError):
    """Not enough (or non-contiguous) history for the requested window."""


class GridLookupError(KeyError):
    """A (tenor, moneyness) query does not sit on the surface grid."""


class FormatError(ValueError):
    """A surface CSV file is malformed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OrderError(ValueError):
    """Dates are not strictly increasing."""


class NoSolutionError(ValueError):
    """Implied volatility has no solution for the given price."""


class ConvergenceError(ArithmeticError):
    """An iterative solver failed to converge."""


class StateError(RuntimeError):
    """An object was used in the wrong mode (e.g. backward on an inference tape)."""


class AlignmentError(ValueError):
    """Realized and forecast series do not line up."""


class LookAheadError(IndexError):
    """Data dated at or after the as-of limit was requested."""


class ConfigError(ValueError):
    """Invalid or unknown configuration key."""

    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")
