class InputError(ValueError):
    """Malformed, inconsistent or unreadable input."""


class InsufficientDataError(InputError):
    """The analysis window holds too little data to learn normal behaviour."""
