"""Exception types shared across the package.

Every failure mode that callers are expected to catch has its own class so
tests can assert on the type rather than on message text. Messages still
carry the offending values (shapes, keys, offsets) because they end up in
CLI diagnostics.
"""


class DepthgateError(Exception):
    """Base class for all package-specific failures."""


class ShapeError(DepthgateError):
    """Operands have incompatible or unexpected shapes."""


class EmptyInputError(DepthgateError):
    """An operation received zero elements where at least one is required."""


class InsufficientPointsError(DepthgateError):
    """A point-cloud operation needs more points than the cloud contains."""


class DegenerateCloudError(DepthgateError):
    """A cloud has no spatial extent where a scale is required."""


class ParseError(DepthgateError):
    """A serialized artifact is malformed.

    ``location`` is a byte offset for binary containers and a line number
    for text formats; the message states which.
    """

    def __init__(self, message: str, location: int | None = None):
        super().__init__(message)
        self.location = location


class ConfigError(DepthgateError):
    """A configuration value is unknown, ill-typed, or inconsistent."""


class NumericError(DepthgateError):
    """A computation produced non-finite values."""
