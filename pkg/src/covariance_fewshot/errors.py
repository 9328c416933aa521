"""
Exception hierarchy for CovarianceFewShot.

Every error raised by the library derives from `CovarianceFewShotError` and belongs to
one of three families, each mapped to a stable CLI exit code:

- `UsageError` (exit 1): bad flags, bad config files, empty sweep grids.
- `DataError` (exit 2): malformed inputs, mismatched dimensions, missing classes.
- `NumericalError` (exit 3): factorization failures and non-finite losses.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class CovarianceFewShotError(Exception):
    """Base class of all library errors."""

    exit_code = EXIT_USAGE


class UsageError(CovarianceFewShotError):
    exit_code = EXIT_USAGE


class ConfigError(UsageError):
    """
    Configuration failed schema validation.

    :param message: Summary message.
    :param field_paths: Dotted paths of the offending fields (e.g. ``weights.alpha``).
    """

    def __init__(self, message: str, field_paths: list[str] | None = None) -> None:
        self.field_paths = list(field_paths or [])
        if self.field_paths:
            message = f"{message}: " + "; ".join(self.field_paths)
        super().__init__(message)


class EmptyGridError(UsageError):
    pass


class DataError(CovarianceFewShotError, ValueError):
    exit_code = EXIT_DATA


class EmptyClassError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class FormatError(DataError):
    """
    An embedding file could not be parsed.

    :param message: Description of the problem.
    :param offset: Byte offset (binary files) where the problem was detected.
    :param row: Zero-based sample row, when known.
    :param column: Zero-based feature column, when known.
    """

    def __init__(
        self, message: str, *, offset: int | None = None, row: int | None = None, column: int | None = None
    ) -> None:
        self.offset = offset
        self.row = row
        self.column = column
        located = (("offset", offset), ("row", row), ("column", column))
        details = [f"{name}={value}" for name, value in located if value is not None]
        super().__init__(f"{message} ({', '.join(details)})" if details else message)


class EmptyFileError(DataError):
    pass


class InsufficientSamplesError(DataError):
    def __init__(self, class_name: str, available: int, shots: int) -> None:
        self.class_name = class_name
        super().__init__(f"Class '{class_name}' has {available} samples, needs more than {shots}")


class LabelOutOfRangeError(DataError):
    pass


class MissingGaussiansError(DataError):
    pass


class TooFewPrototypesError(DataError):
    pass


class NonPositiveDiagonalError(DataError):
    pass


class FactorizationMissingError(DataError):
    pass


class NumericalError(CovarianceFewShotError, ArithmeticError):
    exit_code = EXIT_NUMERICAL


class CholeskyFailureError(NumericalError):
    pass


class SingularCovarianceError(NumericalError):
    pass


class NonFiniteEvaluationError(NumericalError):
    pass


class NonFiniteLossError(NumericalError):
    """
    A training loss became NaN or infinite.

    :param message: Description of the offending component.
    :param epoch: Epoch index at which the loss diverged, if inside the training loop.
    :param step: Step index inside the epoch, if inside the training loop.
    """

    def __init__(self, message: str, *, epoch: int | None = None, step: int | None = None) -> None:
        self.epoch = epoch
        self.step = step
        if epoch is not None:
            message = f"{message} (epoch={epoch}, step={step})"
        super().__init__(message)
