"""Exception hierarchy shared by all modules."""


class IntervgapError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(IntervgapError):
    """A role map, config or file header references something that does not exist."""


class ValidationError(IntervgapError):
    """Input values violate a documented invariant (e.g. non-binary exposure)."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"{message} (row {row})")
        self.row = row


class DegenerateGroupError(IntervgapError):
    """One of the exposure groups has no rows."""


class SingularDesignError(IntervgapError):
    """The design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(IntervgapError):
    """Logistic IRLS failed to converge or hit (quasi-)separation."""


class EvaluationError(IntervgapError):
    """A model was evaluated on a row missing one of its regressors."""


class PositivityError(IntervgapError):
    """Too many simulated rows fell outside the fitted support, or an
    identification formula needs a zero-probability conditioning cell."""


class EstimationError(IntervgapError):
    """Bootstrap or estimation failed beyond the tolerated failure rate."""
