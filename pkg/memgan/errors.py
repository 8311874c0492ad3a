"""Exception types raised across the package."""

from __future__ import annotations


class ShapeMismatchError(ValueError):
    """A vector or record does not have the dimension its spec declares."""


class PrecisionError(ArithmeticError):
    """A quantity cannot be represented at double precision."""


class SourceExhaustedError(RuntimeError):
    """A file-backed image source has no records left."""


class SupportOverflowError(OverflowError):
    """A support size exceeds the configured maximum or overflows."""
