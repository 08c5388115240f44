"""Universal polarization for binary processes with memory."""

from unipolar.errors import (
    DomainError,
    IndeterminateError,
    SizeLimitError,
    UnipolarError,
    ValidationError,
)

__all__ = [
    "DomainError",
    "IndeterminateError",
    "SizeLimitError",
    "UnipolarError",
    "ValidationError",
]

__version__ = "0.1.0"
