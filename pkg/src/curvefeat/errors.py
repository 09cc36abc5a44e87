"""Exception types shared across the package."""


class CurvefeatError(Exception):
    """Base class for all package errors."""


class DimensionTooSmall(CurvefeatError):
    """Image dimensions cannot support the requested scale ladder."""


class BadAngleCount(CurvefeatError):
    """Angle count at the second scale must be a positive multiple of 4."""


class GeometryTooShallow(CurvefeatError):
    """Fewer curvelet scales than the band mapping requires."""


class ShapeMismatch(CurvefeatError):
    """Array shapes inconsistent with the geometry or with each other."""


class BadChannelCount(CurvefeatError):
    """Channel axis does not have the expected extent."""


class MissingForwardCache(CurvefeatError):
    """A VJP was requested without the matching forward cache."""


class EmptyInput(CurvefeatError):
    """Metric requested on an empty collection."""


class SingleClassInput(CurvefeatError):
    """Ranking metric requested with only one label present."""
