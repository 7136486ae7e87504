"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Matrix or argument dimensions violate an operation's contract."""


class FormatError(ValueError):
    """A matrix file is malformed; the message names the offending field."""


class ConfigError(ValueError):
    """A kernel configuration or launch parameter is out of range."""


class ValidationError(ValueError):
    """Input values are unusable (NaN or Inf entries)."""


class DegenerateInputError(ValueError):
    """An all-zero reference makes the requested metric undefined."""


class TileRangeError(IndexError):
    """A tile index lies outside the tiled extent of a matrix."""


class ExecutionModelError(RuntimeError):
    """A kernel violated the data-parallel execution contract."""


class BarrierDivergenceError(ExecutionModelError):
    """Some work-items of a group reached a barrier that others skipped."""


class SharedMemoryRaceError(ExecutionModelError):
    """Conflicting same-phase accesses to workgroup-shared memory."""


class ConvergenceError(ArithmeticError):
    """An iterative stage exceeded its sweep budget."""
