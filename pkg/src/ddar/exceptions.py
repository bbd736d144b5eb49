"""Exception hierarchy shared across the package."""


class DDARError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DDARError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(DDARError, ValueError):
    """An entry lies outside the domain of a function (e.g. log of 0)."""


class DegenerateInputError(DDARError, ValueError):
    """Input is degenerate, e.g. a zero-norm row fed to a cosine layer."""


class ContractError(DDARError, ValueError):
    """A documented precondition was violated by the caller."""


class CheckpointError(DDARError, ValueError):
    """A checkpoint file is malformed, truncated or inconsistent."""


class DataError(DDARError, ValueError):
    """A dataset or CSV file could not be parsed or is unusable."""


class NumericError(DDARError, FloatingPointError):
    """Training produced a non-finite value."""
