class F0TrackError(Exception):
    """Base class for library errors."""


class DecodeError(F0TrackError, ValueError):
    """A bit string or serialized state is malformed."""


class SeedLengthError(F0TrackError, ValueError):
    """A seed is too short for the bits an operation consumes."""


class AllGroupsBroken(F0TrackError):
    """Every estimator group of a constant-factor tracker exceeded its budget."""


class AllDiscarded(F0TrackError):
    """No usable sketch instance remains to answer a query."""


class SaturationError(F0TrackError):
    """Every bucket of a sketch is occupied, so occupancy cannot be inverted."""


class OracleUnavailable(F0TrackError):
    """The constant-factor oracle has no estimate to offer."""


class OracleCapacityError(F0TrackError, MemoryError):
    """The exact distinct-count oracle was asked to hold too many elements."""
