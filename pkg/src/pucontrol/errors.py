"""Exception hierarchy shared across the package."""


class PUControlError(Exception):
    """Base class for all package errors."""


class ConfigError(PUControlError):
    """Invalid configuration: missing columns, bad role maps, bad flags."""


class ParseError(PUControlError):
    """Malformed input data (non-numeric cells, missing values)."""


class DomainError(PUControlError):
    """A value is outside its allowed domain (e.g. treatment not in {0,1})."""


class InsufficientDataError(PUControlError):
    """Too few units to carry out the requested operation."""


class TrainingError(PUControlError):
    """A model cannot be fit (e.g. single-class input)."""


class OverlapError(PUControlError):
    """Propensity trimming left a group empty; wider bounds are needed."""


class EstimationError(PUControlError):
    """An effect estimator's preconditions are violated."""
