"""Exception hierarchy shared across the toolkit.

ValidationError covers contract violations (bad arguments, inconsistent
shapes, degenerate inputs); FormatError covers malformed artifact files.
The CLI maps these to distinct exit codes.
"""


class FlowsegError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(FlowsegError):
    """Input violates a documented precondition or invariant."""


class FormatError(FlowsegError):
    """An artifact file is malformed (bad magic, truncation, overflow)."""


class NumericalError(FlowsegError):
    """A computation produced non-finite intermediates."""
