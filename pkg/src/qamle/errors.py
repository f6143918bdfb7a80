"""Exception types raised across the package."""


class QamleError(Exception):
    """Base class for all errors raised by this package."""


class EmptyBoundary(QamleError):
    """The discrete boundary layer of a region has no points."""


class EmptySet(QamleError):
    pass


class DisconnectedCurve(QamleError):
    """No admissible ordered curve sample joins the two points."""


class CoincidentPoints(QamleError):
    """A pairwise quantity was requested for two points at distance zero."""


class TooFewPoints(QamleError):
    pass


class EmptyConstraints(QamleError):
    pass


class ConstraintOverlap(QamleError):
    """A correction region would overwrite constrained values."""


class DegenerateField(QamleError):
    """Biponctual data with zero Gamma^1 value; the point c is undefined."""


class UnsupportedExtension(QamleError):
    """The requested minimal extension is not available for this functional."""


class MaxIterExceeded(QamleError):
    """The refinement loop hit its iteration cap.

    The partial state is kept on ``self.state`` so callers can inspect or
    persist it.
    """

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


class ParseError(QamleError):
    """Malformed input file; the message names the offending location."""


class InfiniteLipschitz(QamleError):
    """Constraint data whose functional value is infinite."""
