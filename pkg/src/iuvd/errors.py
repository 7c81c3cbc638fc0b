"""Exception types shared across the package."""


class IuvdError(Exception):
    """Base class for all errors raised by this package."""


class TemplateError(IuvdError):
    """Malformed or unusable body template."""


class ChartOverlapError(TemplateError):
    """A UV chart maps two triangles of one part onto the same texel."""

    def __init__(self, part_index, message=None):
        self.part_index = part_index
        super().__init__(message or f"overlapping UV triangles in part {part_index}")


class ProviderError(IuvdError):
    """Occupancy provider produced unusable output."""


class ProtocolError(IuvdError):
    """Malformed frame on the inference wire protocol; the stream is closed."""


class TransportError(IuvdError):
    """Transport failure on the inference wire protocol; retriable.

    ``frames_completed`` counts frames fully round-tripped before the failure.
    """

    def __init__(self, message, frames_completed=0):
        self.frames_completed = frames_completed
        super().__init__(message)
