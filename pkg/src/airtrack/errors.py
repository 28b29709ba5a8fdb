"""Exception types shared across the toolkit."""


class AirtrackError(Exception):
    """Base class for all toolkit errors."""


class NonFiniteInput(AirtrackError):
    """An input contained NaN or infinite values."""


class DimensionMismatch(AirtrackError):
    """An array argument had an incompatible shape."""


class SingularInnovation(AirtrackError):
    """Innovation covariance is singular or not positive definite."""


class EmptySequence(AirtrackError):
    """A sequence operation received zero timesteps."""


class NonFiniteLoss(AirtrackError):
    """A training step produced a NaN or infinite loss."""


class AttentionDisabled(AirtrackError):
    """Attention maps requested from a model built without attention."""


class IdentityMissing(AirtrackError):
    """A query identity has no gallery entry."""


class MissingComparator(AirtrackError):
    """A configured comparator is absent from a score map."""


class SizeLimit(AirtrackError):
    """A problem instance exceeds the exact solver's size cap."""


class EmptyGroundTruth(AirtrackError):
    """Evaluation requires at least one ground-truth track."""


class FrameOrderViolation(AirtrackError):
    """Frame indices were not in ascending order."""


class SpecError(AirtrackError):
    """A scenario specification is internally inconsistent."""


class ParseError(AirtrackError):
    """A file did not conform to its declared format."""


class MissingChipWarning(UserWarning):
    """A referenced chip file could not be loaded; zeros substituted."""
