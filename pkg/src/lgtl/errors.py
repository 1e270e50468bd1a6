"""Exception types raised across the package."""


class LgtlError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(LgtlError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RangeError(LgtlError, IndexError):
    pass


class ShapeError(LgtlError, ValueError):
    pass


class DomainError(LgtlError, ValueError):
    """An operation is undefined for the given input (empty hop, isolated node...)."""


class PreconditionError(LgtlError, ValueError):
    pass


class ConfigError(LgtlError, ValueError):
    pass


class DegenerateStructureError(LgtlError, ValueError):
    pass


class NumericError(LgtlError, ArithmeticError):
    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
