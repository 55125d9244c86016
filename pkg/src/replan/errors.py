"""Exception hierarchy shared across the package.

The CLI maps ``InputError`` to exit code 2 and ``InvariantViolation`` to 3.
"""


class ReplanError(Exception):
    pass


class InputError(ReplanError, ValueError):
    """Malformed or inconsistent user-supplied data."""


class InvariantViolation(ReplanError, RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""
