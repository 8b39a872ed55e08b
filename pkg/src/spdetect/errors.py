"""Shared exception types."""


class InvalidInput(ValueError):
    """Raised when an argument violates an operation's precondition."""


class OutOfBounds(IndexError):
    """Raised when a rectangle or index falls outside its host grid."""
