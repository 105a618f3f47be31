"""Exception hierarchy for the panorama engine.

Every error raised by this package derives from OmnipaintError so callers
can catch at whatever granularity they need. The CLI maps subtrees to exit
codes (config -> 2, generator/transport/protocol -> 3, state -> 4).
"""


class OmnipaintError(Exception):
    """Base class for all engine errors."""


class DimensionError(OmnipaintError):
    """Raster dimensions violate a contract (shape mismatch, bad aspect)."""


class GeometryError(OmnipaintError):
    """Projection parameters are geometrically invalid (fov >= 180, ...)."""


class NumericError(OmnipaintError):
    """Non-finite values where finite numbers are required."""


class ConfigError(OmnipaintError):
    """Invalid run or engine configuration."""


class PlanningError(OmnipaintError):
    """Traversal plan cannot satisfy its coverage/overlap invariants."""


class SchedulingError(OmnipaintError):
    """No planned view satisfies the scheduling contract."""


class SteeringError(OmnipaintError):
    """A user-chosen view cannot be scheduled (insufficient overlap or
    nothing left to generate there)."""

    def __init__(self, message, hint=None):
        super().__init__(message)
        self.hint = hint  # optional (lon, lat) suggestion near the frontier


class ContractError(OmnipaintError):
    """Generator request violates the outpainting contract."""


class GeneratorError(OmnipaintError):
    """Remote generator answered with an application-level failure."""


class TransportError(OmnipaintError):
    """Remote generator unreachable after retries (retryable transport)."""


class ProtocolError(OmnipaintError):
    """Remote generator answered with a malformed or oversized payload."""


class StateError(OmnipaintError):
    """Run state does not permit the requested operation."""
