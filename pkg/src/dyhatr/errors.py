"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes, so every failure a user can
trigger should surface as one of them.
"""


class DyhatrError(Exception):
    """Base class for all package errors."""


class ShapeError(DyhatrError, ValueError):
    """Operand dimensions do not line up."""


class ContractError(DyhatrError, ValueError):
    """A documented precondition of an operation was violated."""


class NumericError(DyhatrError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class DegenerateMaskError(NumericError):
    """A softmax row has every entry masked out."""


class DataError(DyhatrError):
    """Input data could not be interpreted."""


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class SplitError(DataError):
    """The evaluation snapshot cannot support the requested split."""


class ConfigError(DyhatrError, ValueError):
    """Invalid or inconsistent configuration."""


class CheckpointError(DyhatrError):
    """Checkpoint missing, corrupt, or written by an incompatible version."""
