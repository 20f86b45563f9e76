"""Exception hierarchy shared by every layer.

Each class carries the exit code the CLI returns when it escapes a command:
0 success, 1 usage error, 2 data error, 3 numeric failure.
"""


class NMTError(Exception):
    exit_code = 1


# Usage / configuration
class ConfigError(NMTError):
    exit_code = 1


# Data (files, corpora, checkpoints)
class DataError(NMTError):
    exit_code = 2


class CheckpointCorruptError(DataError):
    pass


# Numeric failures
class NumericError(NMTError):
    exit_code = 3


class ShapeMismatchError(NumericError):
    pass


class PrecisionMismatchError(NumericError):
    pass


class NumericOverflowError(NumericError):
    pass


class TapeConsumedError(NumericError):
    pass


class NotScalarError(NumericError):
    pass


class NonDeterministicClosureError(NumericError):
    pass
