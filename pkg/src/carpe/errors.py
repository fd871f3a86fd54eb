"""Exception types shared across the package."""


class CarpeError(Exception):
    """Base class for all package errors."""


class ShapeError(CarpeError):
    """Tensor dimensions do not satisfy an operation's contract."""


class ConfigError(CarpeError):
    """Invalid configuration value (head counts, ratios, vocab limits, ...)."""


class ContractError(CarpeError):
    """An operation was called outside its contract (non-scalar loss, ...)."""


class PreconditionError(ContractError):
    """A stated precondition was violated (e.g. fully masked attention row)."""


class NumericError(CarpeError):
    """Non-finite values where finite ones are required."""


class TokenError(CarpeError):
    """Out-of-vocabulary word in a closed toy vocabulary."""


class SceneError(CarpeError):
    """Invalid scene specification (overlap, too many objects)."""


class CheckpointError(CarpeError):
    """Malformed, mismatched or incomplete checkpoint."""


class DataError(CarpeError):
    """Evaluation input does not meet the harness requirements."""
