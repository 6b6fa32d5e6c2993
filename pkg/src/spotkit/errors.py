"""Exception hierarchy shared across the toolkit."""
from __future__ import annotations


class SpotkitError(Exception):
    """Base class for all toolkit errors."""


class GeometryError(SpotkitError):
    """Invalid region arithmetic input (bad scale, broken invariant)."""


class RegionKindError(GeometryError):
    """Operation applied to a region of the wrong kind."""


class RegionArityError(GeometryError):
    """Point count does not match the region kind."""


class CoordinateError(GeometryError):
    """A coordinate is outside its allowed frame; names the offender."""

    def __init__(self, message: str, coordinate: tuple[float, float] | None = None):
        super().__init__(message)
        self.coordinate = coordinate


class RegionParseError(SpotkitError):
    """Malformed region token span; carries the character offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class TemplateError(SpotkitError):
    """Template/argument mismatch or invalid template definition."""


class RegionReferenceError(SpotkitError):
    """A turn cites a region index that the record does not define."""


class RecordError(SpotkitError):
    """Invalid instruction record or record file; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ConfigError(SpotkitError):
    """Invalid run configuration (unknown source, unresolvable path, ...)."""


class GenerationError(SpotkitError):
    """Dialogue generation kept failing validation; keeps the last reply for audit."""

    def __init__(self, message: str, last_reply: str = ""):
        super().__init__(message)
        self.last_reply = last_reply


class BackendError(SpotkitError):
    """Base class for model-backend failures."""


class TransportError(BackendError):
    """Retryable transport-level failure (network, 5xx)."""


class BackendTimeout(BackendError):
    """The backend did not answer within the configured timeout."""


class ProtocolError(BackendError):
    """The request or response violates the wire contract."""


class OracleError(BackendError):
    """A mock oracle hit an impossible situation; signals a harness bug."""


class MetricError(SpotkitError):
    """A metric is missing required ground-truth context."""


class UnknownSessionError(SpotkitError):
    """No session with the given id."""


class EventValidationError(SpotkitError):
    """Referring event or marker mismatch in a posted message."""


class GatewayError(SpotkitError):
    """The backend failed while serving a session message."""
