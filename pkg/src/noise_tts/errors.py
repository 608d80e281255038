"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class NoiseTTSError(Exception):
    exit_code = 1


class InvalidInputError(NoiseTTSError, ValueError):
    exit_code = 4


class ConfigError(NoiseTTSError):
    exit_code = 2


class DataError(NoiseTTSError):
    exit_code = 3


class AlignmentMismatchError(DataError):
    pass


class CheckpointError(NoiseTTSError):
    """Raised when a checkpoint cannot be read or does not match the model config."""

    exit_code = 5
