"""Exception hierarchy.

The CLI maps each family onto an exit code: configuration problems are usage
errors (1), anything wrong with the data is a data error (2), and numerical
degeneracy is 3.
"""


class FareAuditError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FareAuditError, ValueError):
    """Invalid or unknown configuration."""


class DataError(FareAuditError, ValueError):
    """Input data is unusable."""


class SchemaError(DataError):
    """A mapped column or field is missing from the input."""


class EncodingError(DataError):
    """A record cannot be encoded under the active encoding spec."""


class PipelineError(DataError):
    """A pipeline stage received no usable rows."""


class SplitError(DataError):
    """A train/test split would leave one side empty."""


class TransportError(DataError):
    """Network failure persisted after all retries."""


class SourceConfigError(DataError):
    """The remote endpoint rejected the request (HTTP 4xx)."""


class CacheCorruptionError(DataError):
    """A cached page no longer matches its recorded digest."""


class ContractError(FareAuditError, ValueError):
    """Caller violated an argument contract (shape, schema, length)."""


class NumericalError(FareAuditError, ArithmeticError):
    """Base class for numerical failures."""


class DegenerateError(NumericalError):
    """The statistic is undefined for this input (zero variance, empty margin)."""


class UnderdeterminedError(NumericalError):
    """Fewer observations than parameters."""


class DomainError(NumericalError, ValueError):
    """Argument outside the domain of a special function."""


class UndefinedR2Error(DegenerateError):
    """R^2 is undefined because the targets have zero variance.

    The holdout RMSE is still available on ``rmse``.
    """

    def __init__(self, message, rmse):
        super().__init__(message)
        self.rmse = rmse
