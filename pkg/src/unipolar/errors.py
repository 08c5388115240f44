"""Exception types shared across the package.

Each maps to a distinct CLI exit code.
"""


class UnipolarError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(UnipolarError, ValueError):
    """Malformed input: bad shapes, non-stochastic matrices, invalid plans."""

    exit_code = 2


class DomainError(UnipolarError, ValueError):
    """Input is well formed but outside the domain of the operation."""

    exit_code = 2


class IndeterminateError(UnipolarError):
    """A search ran out of budget before reaching a definitive answer."""

    exit_code = 3


class SizeLimitError(UnipolarError):
    """An exact enumeration would exceed its configured size limit."""

    exit_code = 4
