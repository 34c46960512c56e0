"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes: validation-type errors exit with 1,
numeric failures with 2.
"""


class UKnowError(Exception):
    """Base class for all package errors."""


class ValidationError(UKnowError):
    """Bad input, bad configuration or a broken call contract."""


class ContractError(ValidationError):
    pass


class DimensionError(ContractError, ValueError):
    pass


class ConfigError(ValidationError):
    pass


class FormatError(ValidationError):
    """Malformed raster container; message carries the byte offset."""

    def __init__(self, message, offset=None, entry=None):
        self.offset = offset
        self.entry = entry
        parts = [message]
        if entry is not None:
            parts.append(f"entry={entry!r}")
        if offset is not None:
            parts.append(f"offset={offset}")
        super().__init__(" ".join(parts))


class NumericError(UKnowError, ArithmeticError):
    pass


class DomainError(NumericError):
    pass


class UndefinedMetricError(NumericError):
    pass


class TrainingError(NumericError):
    pass
