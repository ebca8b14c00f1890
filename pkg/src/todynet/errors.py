"""Exception hierarchy shared by every layer of the package."""


class TodyNetError(Exception):
    """Base class for all package errors."""


class DimensionError(TodyNetError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(TodyNetError, ValueError):
    """A hyperparameter or structural argument is out of range."""


class DataError(TodyNetError, ValueError):
    """Input data is malformed or inconsistent."""


class ParseError(DataError):
    """A `.ts` file could not be parsed.  Carries the offending line number."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ContractError(TodyNetError, RuntimeError):
    """A caller violated an operation's preconditions."""


class NonFiniteError(TodyNetError, FloatingPointError):
    """A NaN or Inf appeared in a forward or backward pass."""


class IntegrityError(TodyNetError):
    """A checkpoint is truncated, corrupted or incompatible."""
