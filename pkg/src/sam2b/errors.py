"""Exception hierarchy shared across the package."""


class Sam2bError(Exception):
    """Base class for all package errors."""


class DimensionError(Sam2bError, ValueError):
    pass


class ConfigError(Sam2bError, ValueError):
    pass


class DegenerateGeometryError(Sam2bError, ValueError):
    pass


class NotFittedError(Sam2bError, RuntimeError):
    pass


class ArityError(DimensionError):
    pass


class FileFormatError(Sam2bError, IOError):
    """Base for on-disk format problems (datasets and checkpoints)."""


class VersionMismatchError(FileFormatError):
    pass


class ChecksumError(FileFormatError):
    pass


class TruncatedFileError(ChecksumError):
    """File shorter than its header promises; also a checksum failure."""


class VariantMismatchError(FileFormatError):
    pass


class InsufficientBatchError(Sam2bError, ValueError):
    pass


class TrainingError(Sam2bError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class UnsupportedVariantError(Sam2bError, ValueError):
    pass
