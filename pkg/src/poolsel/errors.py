"""Exception types shared across the package."""


class PoolselError(Exception):
    """Base class for all poolsel errors."""


class FormatError(PoolselError):
    """File has a bad magic string, version, or header field."""


class TruncationError(PoolselError):
    """File payload is shorter than the header declares."""


class DataError(PoolselError):
    """Values violate a data contract (non-finite, out of range, mismatched)."""

    def __init__(self, message: str, *, row: int | None = None, col: int | None = None):
        super().__init__(message)
        self.row = row
        self.col = col


class IoError(PoolselError):
    """Operating-system level read/write failure."""


class ArgumentError(PoolselError, ValueError):
    """Caller passed arguments outside an operation's precondition."""


class DegenerateModelError(PoolselError):
    """Probe training set contains fewer than two classes."""


class DivergenceError(PoolselError):
    """Probe training produced a non-finite loss."""

    def __init__(self, message: str, *, epoch: int):
        super().__init__(message)
        self.epoch = epoch
