"""Exception hierarchy shared by every subpackage."""


class DiCycleError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DiCycleError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigurationError(DiCycleError, ValueError):
    """A hyperparameter or spec value violates its documented constraints."""


class DegenerateInputError(DiCycleError, ValueError):
    """Input is well-typed but carries no usable information (e.g. fully masked)."""


class ContractError(DiCycleError, RuntimeError):
    """An API precondition was violated by the caller."""


class DataError(DiCycleError, ValueError):
    """Sample or label content is invalid."""


class SchemaError(DataError):
    """An input file does not expose the expected columns."""


class UndefinedMetricError(DiCycleError, ValueError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class TrainingError(DiCycleError, RuntimeError):
    """Training cannot proceed (empty data, non-finite loss)."""
