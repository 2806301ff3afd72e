"""Exception hierarchy shared by all modules."""


class RadiantError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(RadiantError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class RayPlaneParallel(GeometryError):
    pass


class NonRigidRotation(GeometryError):
    pass


class ReparamError(RadiantError):
    pass


class NonUnitNormal(ReparamError):
    pass


class SingularLighting(ReparamError):
    pass


class DegenerateRadiance(ReparamError):
    """Raised when a radiance vector is too close to zero to invert (black surface)."""


class NormOverflow(ReparamError):
    pass


class IntegrationError(RadiantError):
    pass


class GrazingNormal(IntegrationError):
    pass


class SingularSystem(IntegrationError):
    pass


class SweepError(RadiantError):
    pass


class TooFewValidViews(SweepError):
    pass


class NoValidHypothesis(SweepError):
    pass


class InsufficientViews(SweepError):
    pass


class MetricsError(RadiantError):
    pass


class EmptyOverlap(MetricsError):
    pass


class EmptyCloud(MetricsError):
    pass


class IOFormatError(RadiantError):
    pass


class MalformedHeader(IOFormatError):
    pass


class TruncatedData(IOFormatError):
    pass


class UnsupportedScale(IOFormatError):
    pass


class FiniteRequired(IOFormatError):
    pass


class SchemaError(IOFormatError):
    pass
