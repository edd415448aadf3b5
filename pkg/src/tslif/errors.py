"""Exception types shared across the package."""


class TslifError(Exception):
    """Base class for all package-specific errors."""


class ContractError(TslifError, ValueError):
    """A precondition or invariant of an operation was violated."""


class SingularityError(TslifError, ArithmeticError):
    """A transfer function was evaluated at (or too close to) a pole."""


class DataFormatError(TslifError, ValueError):
    """An input file is malformed (ragged rows, non-numeric cells, ...)."""
