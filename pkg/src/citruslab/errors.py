"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Shapes of operands do not compose."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""


class FormatError(ValueError):
    """A binary file (checkpoint, IDX) is malformed."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
