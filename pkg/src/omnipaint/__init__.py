"""omnipaint: autoregressive 360-degree panorama outpainting engine."""

from .canvas import Panorama, attach_view, compose, init_from_nfov, known_fraction
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    GeneratorError,
    GeometryError,
    NumericError,
    OmnipaintError,
    PlanningError,
    ProtocolError,
    SchedulingError,
    StateError,
    SteeringError,
    TransportError,
)
from .geometry import (
    Cubemap,
    SphereCoord,
    ViewSpec,
    backproject_view,
    cubemap_to_equirect,
    equirect_to_cubemap,
    geometry_map_for,
    project_view,
    rotate_horizontal,
    view_footprint,
)

__all__ = [
    "Cubemap",
    "Panorama",
    "SphereCoord",
    "ViewSpec",
    "attach_view",
    "backproject_view",
    "compose",
    "cubemap_to_equirect",
    "equirect_to_cubemap",
    "geometry_map_for",
    "init_from_nfov",
    "known_fraction",
    "project_view",
    "rotate_horizontal",
    "view_footprint",
    "OmnipaintError",
    "DimensionError",
    "GeometryError",
    "NumericError",
    "ConfigError",
    "PlanningError",
    "SchedulingError",
    "SteeringError",
    "ContractError",
    "GeneratorError",
    "TransportError",
    "ProtocolError",
    "StateError",
]

__version__ = "0.1.0"
