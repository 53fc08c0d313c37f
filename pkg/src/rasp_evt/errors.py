"""Exception hierarchy shared by every module of the package."""


class RaspError(Exception):
    """Base class for all package errors."""


class ConfigError(RaspError, ValueError):
    """Invalid parameters or configuration values."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DomainError(RaspError, ValueError):
    """A point lies outside the domain box."""


class SingularHit(RaspError):
    """A point lies on the singular set, where the map is undefined."""

    def __init__(self, point=None, message="point lies on the singular set"):
        super().__init__(message if point is None else f"{message}: {point!r}")
        self.point = point


class CapabilityError(RaspError):
    """The requested operation is not supported for this map."""


class PreconditionError(RaspError, ValueError):
    """An operation was called outside its stated precondition."""


class BoundaryError(RaspError):
    """A point lies on the boundary of some image set, where the density is undefined."""


class LevelError(RaspError):
    """An analytic level sequence is not valid at the requested block length."""


class AttractorError(RaspError):
    """Forward iteration did not settle on a periodic orbit."""


class AssumptionViolated(RaspError):
    """A structural hypothesis (attractor away from the singular set, forward invariance) fails."""


class BudgetError(RaspError):
    """The Monte Carlo budget is too small for the requested estimate."""


class EstimateUndefined(RaspError):
    """An estimator has no defined value on the observed data."""


class BatchError(RaspError):
    """A batch run failed; partial results were discarded."""
