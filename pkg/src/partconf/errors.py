class PartconfError(Exception):
    """Base class for pipeline errors that the CLI maps to exit codes."""

    exit_code = 1


class DataError(PartconfError, ValueError):
    exit_code = 6


class InsufficientImagesError(DataError):
    pass


class SchemaError(PartconfError, ValueError):
    exit_code = 4


class StageOrderError(PartconfError):
    exit_code = 5


class MissingFileError(PartconfError, FileNotFoundError):
    exit_code = 3
