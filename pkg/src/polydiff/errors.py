"""Exception types shared across the package."""


class PolydiffError(Exception):
    """Base class for all package errors."""


class DomainError(PolydiffError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularTimeError(DomainError):
    """A score or loss was requested at a time where it is undefined (std = 0)."""


class ContractError(PolydiffError, ValueError):
    """A caller violated an operation's precondition."""


class ShapeError(ContractError):
    """Operand shapes are incompatible; message names both shapes."""


class SchemaError(PolydiffError, ValueError):
    """Tabular schema mismatch or malformed schema declaration."""


class ConfigError(PolydiffError, ValueError):
    """Invalid or unknown configuration keys/values."""


class CheckpointError(PolydiffError, RuntimeError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class TrainingDivergedError(PolydiffError, RuntimeError):
    """Training aborted because the loss became non-finite."""
