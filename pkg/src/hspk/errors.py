"""Exception hierarchy shared by every module.

CLI exit codes are attached to the exception class so the command layer can
map failures without knowing where they came from.
"""


class HspkError(Exception):
    exit_code = 1


class ConfigError(HspkError, ValueError):
    exit_code = 2


class DimensionError(HspkError, ValueError):
    exit_code = 3


class ContractError(HspkError, ValueError):
    exit_code = 3


class CapacityError(HspkError, MemoryError):
    exit_code = 3


class FormatError(HspkError, ValueError):
    exit_code = 3


class NumericError(HspkError, FloatingPointError):
    exit_code = 4
