"""Shared exception type for invalid user-supplied data."""


class InputError(ValueError):
    """Raised when files, arguments, or configuration values are invalid."""
