"""Exception taxonomy shared by the library and the CLI exit-code mapping."""


class SpgError(Exception):
    """Base class for expected failures."""


class UsageError(SpgError):
    """Bad command-line arguments or malformed configuration (exit code 1)."""


class DataError(SpgError):
    """Unreadable or inconsistent input data (exit code 2)."""


class InternalError(SpgError):
    """An internal invariant was violated (exit code 3)."""
