"""Exception hierarchy.

Every error raised for bad input derives from :class:`QusError`, which is
itself a ``ValueError`` so callers that only care about "bad argument" can
catch that.
"""


class QusError(ValueError):
    pass


class InvalidInputError(QusError):
    """Non-finite or otherwise malformed numeric input."""


class SizeError(QusError):
    """An array is too small, or a window does not fit the frame."""


class ShapeError(QusError):
    """Tensor dimensions do not agree."""


class ParameterError(QusError):
    pass


class DegenerateInputError(QusError):
    """Input carries no information (all-zero envelope, constant window)."""


class GeometryError(QusError):
    pass


class BatchError(QusError):
    pass


class ConfigError(QusError):
    pass


class WeightImportError(QusError):
    def __init__(self, message, names=()):
        super().__init__(message)
        self.names = list(names)


class FormatError(QusError):
    """Bad magic, truncated file or unknown tag in one of the binary containers."""
