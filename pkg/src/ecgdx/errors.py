"""Exception types shared across the package."""


class EcgError(Exception):
    """Base class for all errors raised by ecgdx."""


class FormatError(EcgError, ValueError):
    pass


class ImageIOError(EcgError, OSError):
    pass


class ParameterError(EcgError, ValueError):
    pass


class ShapeError(EcgError, ValueError):
    pass


class DegeneracyError(EcgError, ValueError):
    pass


class HorizonError(EcgError, ArithmeticError):
    """A point maps to infinity under a homography."""


class SegmentationError(EcgError):
    pass


class StateError(EcgError, RuntimeError):
    pass


class DataError(EcgError, ValueError):
    pass


class CompatibilityError(EcgError, ValueError):
    pass


class UndefinedMetricError(EcgError, ValueError):
    pass


class ConfigError(EcgError, ValueError):
    pass
