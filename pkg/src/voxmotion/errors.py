"""Exception hierarchy shared across modules.

Each class carries the CLI exit code used when it escapes a subcommand.
"""


class VoxMotionError(Exception):
    exit_code = 3


class FormatError(VoxMotionError):
    """Malformed or unrecognised file contents."""

    exit_code = 2


class InvariantError(VoxMotionError, ValueError):
    """A domain invariant or precondition was violated."""

    exit_code = 3


class NumericalError(VoxMotionError, ArithmeticError):
    """Non-finite values or a failed numerical check."""

    exit_code = 4


class InvalidTransformError(InvariantError):
    pass


class DegenerateSkeletonError(InvariantError):
    pass
