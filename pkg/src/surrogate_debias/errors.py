"""Exception types raised by the estimation pipeline."""


class EstimationError(Exception):
    """Base class for failures inside the estimation pipeline."""


class SingularDesignError(EstimationError):
    """A design or covariance matrix is numerically rank deficient."""


class InsufficientDataError(EstimationError):
    """Too few (observed) rows to carry out a fit."""


class DegenerateScaleError(EstimationError):
    """Inputs have zero spread, so no bandwidth can be derived."""


class DegenerateInformationError(EstimationError):
    """The one-step information term is too close to zero to invert."""


class NonConvergenceError(EstimationError):
    """An estimating equation has no finite root the solver could reach."""
