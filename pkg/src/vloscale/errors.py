"""Exception hierarchy.

Every failure raised by the library derives from :class:`VloError`. The two
intermediate classes :class:`DataError` and :class:`EstimationError` decide
the CLI exit code (2 and 3 respectively).
"""


class VloError(Exception):
    """Base class for all library errors."""


class DataError(VloError):
    """Input data could not be read or is malformed."""


class EstimationError(VloError):
    """A numerical estimate could not be produced from the given data."""


class DomainError(VloError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigurationError(VloError, ValueError):
    """Inconsistent or unknown configuration."""


class BehindCameraError(EstimationError):
    pass


class DegenerateGeometryError(EstimationError):
    pass


class LowParallaxError(EstimationError):
    pass


class AlignmentDegenerateError(EstimationError):
    pass


class OutOfBoundsError(VloError, IndexError):
    pass


class InsufficientSamplesError(EstimationError):
    pass


class NoConsensusError(EstimationError):
    pass


class RegistrationError(EstimationError):
    pass


class OutOfRangeError(VloError, ValueError):
    pass


class InsufficientDataError(EstimationError):
    pass


class NoValidSegmentsError(EstimationError):
    pass


class MalformedCloudError(DataError):
    pass


class CalibParseError(DataError):
    pass
