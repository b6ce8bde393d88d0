"""Exception types shared across the toolkit."""


class AttkitError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(AttkitError):
    """Column layout does not match the declared schema."""


class ParseError(AttkitError):
    """A cell could not be parsed; message carries row/column address."""


class DomainError(AttkitError):
    """Values violate a table or argument invariant."""


class SingularDesignError(AttkitError):
    """Design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(AttkitError):
    """An iterative solver failed to converge."""


class DegenerateTrimError(AttkitError):
    """A trimming rule emptied one of the arms."""


class InfeasibleMatchingError(AttkitError):
    """Not enough controls to complete the requested matching."""


class InfeasibleBalanceError(AttkitError):
    """Requested covariate balance lies outside the controls' convex hull."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class BootstrapError(AttkitError):
    """Too many bootstrap replicates failed."""


class PredictionError(AttkitError):
    """A fitted model cannot produce a prediction for the query."""


class PairingError(AttkitError):
    """Two profile sets cannot be paired by unit key."""


class ConfigError(AttkitError):
    """Invalid run or simulation configuration."""
