"""Exception hierarchy shared by all modules.

The split mirrors the CLI exit-code contract: input problems (bad files,
bad arguments, bad data) exit 1, output problems exit 2, and violated
internal invariants exit 3.
"""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class InputError(ToolkitError):
    """The caller supplied something unusable (file, argument, or data)."""


class FormatError(InputError):
    """A file does not match its documented format."""


class DataError(InputError):
    """Well-formed input carrying invalid values (non-finite, empty, ...)."""


class ArgumentError(InputError):
    """A function argument violates its precondition."""


class OutputError(ToolkitError):
    """Writing an artifact failed."""


class InternalError(ToolkitError):
    """An internal invariant was violated; never caused by user input."""
