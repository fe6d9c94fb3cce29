"""Exception hierarchy shared by every module.

Each family maps to a distinct CLI exit code (see ``avfusion.cli``).
"""


class AVFusionError(Exception):
    exit_code = 1


class InvalidInputError(AVFusionError, ValueError):
    """Argument values violate an operation's preconditions."""

    exit_code = 3


class ConfigError(AVFusionError, ValueError):
    """Model, training or experiment configuration is inconsistent."""

    exit_code = 2


class DataError(AVFusionError):
    """Feature files or manifests cannot be used."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class MissingModalityError(DataError):
    pass


class SchemaError(DataError):
    pass


class ValidationError(DataError):
    pass


class FormatError(AVFusionError):
    """Model archive has a bad magic tag or unsupported version."""

    exit_code = 4


class CorruptionError(FormatError):
    """Model archive is truncated or fails a checksum."""

    exit_code = 5


class UnsupportedOperationError(AVFusionError):
    exit_code = 2


class InvariantError(AVFusionError, RuntimeError):
    """An internal numerical invariant was violated (e.g. non-finite values)."""

    exit_code = 6
