"""Exception hierarchy shared across the toolkit.

The CLI maps these onto distinct exit codes, so new error types should
subclass one of the three roots below.
"""


class ConfigError(Exception):
    """Bad or unknown configuration key/value."""


class DataError(Exception):
    """Missing or malformed input data."""


class ContractError(Exception):
    """An operation was called outside its contract."""


class ShapeError(ContractError):
    """Tensor shapes do not satisfy an operation's precondition."""


class ParseError(DataError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GimbalLockError(ContractError):
    """Euler decomposition requested too close to the |pitch| = pi/2 singularity."""


class GenerationError(DataError):
    """Synthetic rendering could not produce a valid frame."""


class CheckpointError(DataError):
    """A checkpoint file is unreadable or incompatible with the model."""
