"""Error taxonomy shared by the library and the CLI.

Every error carries the process exit code the CLI maps it to, so command
handlers can stay generic: catch SodkitError, print, exit(err.exit_code).
"""


class SodkitError(Exception):
    """Base class; exit_code 1 unless a subclass says otherwise."""

    exit_code = 1


class UsageError(SodkitError):
    """Bad arguments or an impossible configuration."""

    exit_code = 1


class DimensionError(UsageError):
    """Shapes that make an operator undefined (empty output, channel mismatch)."""


class DataFormatError(SodkitError):
    """Malformed input bytes: image files, manifests, checkpoints."""

    exit_code = 2


class NumericalError(SodkitError):
    """Non-finite values where finite ones are required, or a failed gradient check."""

    exit_code = 3
