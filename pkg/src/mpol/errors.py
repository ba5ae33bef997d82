"""Exception types shared across the package."""


class MPolError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(MPolError):
    exit_code = 2


class DataError(MPolError):
    exit_code = 3


class NumericalError(MPolError):
    exit_code = 4


class InputTooShort(DataError):
    pass


class ConfigMismatch(ConfigError):
    pass


class ShapeMismatch(DataError):
    pass


class FormatError(DataError):
    pass


class CacheMismatch(MPolError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class TrainingDiverged(NumericalError):
    pass


class UndefinedMetric(DataError):
    pass


class NoData(DataError):
    pass


class IoError(MPolError):
    exit_code = 3
