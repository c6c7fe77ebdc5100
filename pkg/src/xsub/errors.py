"""Exception hierarchy shared across the package."""


class XSubError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgumentError(XSubError, ValueError):
    exit_code = 2


class FormatError(XSubError, ValueError):
    """Malformed input file (IDX, CIFAR binary, CSV, cache records)."""

    exit_code = 3


class CapacityError(XSubError):
    """Problem size exceeds what an exact algorithm can enumerate."""

    exit_code = 2


class NumericalError(XSubError, ArithmeticError):
    exit_code = 4


class TrainingError(NumericalError):
    """Loss became non-finite during training."""


class EmptyClassError(XSubError):
    """No eligible samples for a requested class."""

    exit_code = 2


class ConfigError(XSubError):
    exit_code = 2

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class FileError(XSubError, FileNotFoundError):
    exit_code = 3
