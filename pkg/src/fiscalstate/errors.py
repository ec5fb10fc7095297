"""Exception hierarchy shared by every stage of the pipeline."""


class FiscalStateError(Exception):
    """Base class for all errors raised by this package."""


class IngestionError(FiscalStateError):
    """Malformed or inconsistent input file."""


class DomainError(FiscalStateError, ValueError):
    """Input outside the mathematical domain of an operation."""


class SingularDesignError(FiscalStateError):
    """Design matrix is rank deficient.

    ``columns`` holds the names (or positions) of the columns found to be
    linearly dependent on the others.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class EstimationError(FiscalStateError):
    """Estimation failed (too few observations, singular system, ...)."""


class UnsupportedConfigurationError(FiscalStateError):
    pass


class IdentificationError(FiscalStateError):
    """No posterior draw satisfied the identifying restrictions."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}


class ConfigError(FiscalStateError):
    pass
