"""Error taxonomy shared by all modules.

Each class maps to a CLI exit code so scripts can distinguish bad
configuration from bad data from numerical blow-ups.
"""


class NoiseTransferError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(NoiseTransferError):
    """Invalid configuration: bad keys, bad ranges, inconsistent combinations."""

    exit_code = 2


class DataError(NoiseTransferError):
    """Invalid input data: missing files, undersized images, broken manifests."""

    exit_code = 3


class NumericError(NoiseTransferError):
    """Numerical failure: non-finite losses, degenerate inputs to guarded math."""

    exit_code = 4
