"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class EmptySequenceError(ValueError):
    """An operation over sequence positions received no valid positions."""


class TapeConsumedError(RuntimeError):
    """backward() was called on a tape that has already been replayed."""


class DeterminismError(RuntimeError):
    """A function expected to be deterministic returned differing values."""


class ParseError(ValueError):
    """An input file does not conform to its documented format."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed, truncated, or version-mismatched."""


class TrainingDivergedError(RuntimeError):
    """The training loss became NaN or infinite."""
