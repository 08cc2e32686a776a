"""Exception types shared across the package."""


class GowrankError(Exception):
    """Base class for package errors."""


class UsageError(GowrankError):
    """Bad command-line usage or invalid configuration. CLI exit code 1."""


class DataFormatError(GowrankError):
    """Malformed or unusable input data. CLI exit code 2."""


class NumericalError(GowrankError):
    """Non-finite value detected during computation. CLI exit code 3."""
