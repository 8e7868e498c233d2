"""Exception hierarchy shared across the package.

User-facing errors (bad files, bad arguments, out-of-range inputs) derive
from UserError so the CLI can map them to exit code 2; anything else is
treated as an internal failure (exit code 1).
"""


class NvcsslError(Exception):
    pass


class UserError(NvcsslError):
    pass


class ParseError(UserError):
    pass


class ValidationError(UserError):
    pass


class DomainError(UserError):
    """Input outside the supported range, e.g. a time beyond the basis span."""


class NumericError(NvcsslError):
    """A computation would silently produce Inf/NaN; raised instead."""
