"""Spherical geometry for equirectangular panoramas.

Conventions shared by every module in this package:

  - Longitude ``lon`` in degrees, wrapped into [-180, 180); latitude
    ``lat`` in degrees, clamped to [-90, 90].
  - Direction basis: +Z points at (lon 0, lat 0), +X at (lon 90, lat 0),
    +Y at the north pole, i.e.
    (x, y, z) = (cos lat * sin lon, sin lat, cos lat * cos lon).
  - Equirectangular rasters are float arrays of shape (H, W) or (H, W, C)
    with values in [0, 1] and W = 2 H. The center of pixel (u, v) sits at
    lon = (u + 0.5) / W * 360 - 180 and lat = 90 - (v + 0.5) / H * 180,
    so row 0 is the north edge and no pixel center lies exactly on a pole.
  - Masks are boolean (H, W) arrays, True = known.
  - Bilinear sampling wraps horizontally (seam at lon +-180) and clamps
    vertically at the poles. When a mask rides along, a sample counts as
    known only if all four source pixels are known; this conservative rule
    prevents halo bleed at known/unknown boundaries.

Sampling keeps the integer and fractional parts of column positions
separate (see ``_bilinear_wrap``): interpolation weights are then
bit-identical under whole-column shifts of the view center, which is what
makes runs equivariant under exact horizontal rotations.

All functions are pure and never mutate their inputs; they are safe to
call from many threads concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, GeometryError

FACES = ("F", "L", "B", "R", "U", "D")

# Face centers (lon, lat); U/D carry a nominal lon of 0.
FACE_CENTERS = {
    "F": (0.0, 0.0),
    "L": (-90.0, 0.0),
    "B": (180.0, 0.0),
    "R": (90.0, 0.0),
    "U": (0.0, 90.0),
    "D": (0.0, -90.0),
}


def wrap_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180)."""
    return float((lon + 180.0) % 360.0 - 180.0)


def clamp_lat(lat: float) -> float:
    """Clamp a latitude into [-90, 90]."""
    return float(min(90.0, max(-90.0, lat)))


def _sind(deg: float) -> float:
    # Exact values at multiples of 90 degrees keep pole-centered views and
    # cube faces free of spurious 1e-17 residues.
    r = deg % 360.0
    if r == 0.0 or r == 180.0:
        return 0.0
    if r == 90.0:
        return 1.0
    if r == 270.0:
        return -1.0
    return math.sin(math.radians(deg))


def _cosd(deg: float) -> float:
    return _sind(deg + 90.0)


@dataclass(frozen=True)
class SphereCoord:
    """A point on the sphere in degrees; lon wraps, lat clamps."""

    lon: float
    lat: float

    def __post_init__(self):
        object.__setattr__(self, "lon", wrap_lon(self.lon))
        object.__setattr__(self, "lat", clamp_lat(self.lat))


@dataclass(frozen=True)
class ViewSpec:
    """One narrow-field-of-view (gnomonic) local view.

    ``fov_deg`` applies to both axes of the tangent plane (square angular
    extent). Gnomonic projection is only valid below 180 degrees.
    """

    lon: float
    lat: float
    fov_deg: float = 90.0
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if not (0.0 < self.fov_deg < 180.0):
            raise GeometryError(
                f"gnomonic fov must lie in (0, 180), got {self.fov_deg}"
            )
        if self.width < 8 or self.height < 8:
            raise DimensionError(
                f"view raster must be at least 8x8, got {self.width}x{self.height}"
            )
        object.__setattr__(self, "lon", wrap_lon(self.lon))
        object.__setattr__(self, "lat", clamp_lat(self.lat))

    @property
    def center(self) -> SphereCoord:
        return SphereCoord(self.lon, self.lat)

    def to_dict(self) -> dict:
        return {
            "lon": self.lon,
            "lat": self.lat,
            "fov_deg": self.fov_deg,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViewSpec":
        return cls(d["lon"], d["lat"], d["fov_deg"], d["width"], d["height"])


@dataclass(frozen=True)
class Cubemap:
    """Six square faces keyed F, L, B, R, U, D."""

    faces: dict

    def __post_init__(self):
        if set(self.faces) != set(FACES):
            raise DimensionError(f"cubemap needs faces {FACES}, got {sorted(self.faces)}")
        shapes = {f: self.faces[f].shape for f in FACES}
        first = shapes["F"]
        if any(s != first for s in shapes.values()):
            raise DimensionError(f"cubemap faces disagree in shape: {shapes}")
        if first[0] != first[1]:
            raise DimensionError(f"cubemap faces must be square, got {first}")

    @property
    def face_size(self) -> int:
        return self.faces["F"].shape[0]


def check_equirect(img: np.ndarray, min_width: int = 8) -> tuple[int, int]:
    """Validate equirectangular raster shape; returns (H, W)."""
    if img.ndim not in (2, 3):
        raise DimensionError(f"equirect raster must be 2-D or 3-D, got ndim={img.ndim}")
    h, w = img.shape[:2]
    if w != 2 * h:
        raise DimensionError(f"equirect width must be 2x height, got {w}x{h}")
    if w < min_width:
        raise DimensionError(f"equirect width must be >= {min_width}, got {w}")
    return h, w


def face_view(face: str, size: int) -> ViewSpec:
    """The 90-degree ViewSpec whose frustum is exactly one cube face."""
    if face not in FACE_CENTERS:
        raise GeometryError(f"unknown cube face {face!r}")
    lon, lat = FACE_CENTERS[face]
    return ViewSpec(lon, lat, 90.0, size, size)


def latitude_weights(height: int) -> np.ndarray:
    """Per-row solid-angle weights cos(lat) for an equirect raster."""
    lat = np.pi / 2 - (np.arange(height) + 0.5) * (np.pi / height)
    return np.cos(lat)


# -- sampling ----------------------------------------------------------------


def _center_col(lon: float, width: int) -> float:
    # Multiply before dividing: plan centers on nice strides then give exact
    # half-integer column positions, which the split sampler relies on.
    return (lon + 180.0) * width / 360.0 - 0.5


def _split_base(c: float) -> tuple[int, float]:
    n = math.floor(c)
    return int(n), c - n


def _bilinear_wrap(values, col_base, col_off, rows, mask=None):
    """Bilinear sample with horizontal wrap and vertical clamp.

    The column position of each sample is ``col_base + col_off`` with
    ``col_base`` an integer. Fractional weights come from ``col_off``
    alone, so shifting ``col_base`` by whole columns cannot perturb them.

    Returns samples, or (samples, known) when a mask is supplied.
    """
    h, w = values.shape[:2]
    fi = np.floor(col_off)
    ff = col_off - fi
    c0 = (col_base + fi.astype(np.int64)) % w
    c1 = (c0 + 1) % w

    r = np.clip(rows, 0.0, float(h - 1))
    r0f = np.floor(r)
    rf = r - r0f
    r0 = r0f.astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)

    w00 = (1.0 - ff) * (1.0 - rf)
    w01 = ff * (1.0 - rf)
    w10 = (1.0 - ff) * rf
    w11 = ff * rf
    if values.ndim == 3:
        w00, w01, w10, w11 = (x[..., None] for x in (w00, w01, w10, w11))

    out = (
        w00 * values[r0, c0]
        + w01 * values[r0, c1]
        + w10 * values[r1, c0]
        + w11 * values[r1, c1]
    )
    if mask is None:
        return out
    known = mask[r0, c0] & mask[r0, c1] & mask[r1, c0] & mask[r1, c1]
    return out, known


def _bilinear_clamp(values, xs, ys):
    """Plain bilinear sample of a rectangular raster, clamped at borders."""
    h, w = values.shape[:2]
    x = np.clip(xs, 0.0, float(w - 1))
    y = np.clip(ys, 0.0, float(h - 1))
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    xf = x - x0
    yf = y - y0
    w00 = (1.0 - xf) * (1.0 - yf)
    w01 = xf * (1.0 - yf)
    w10 = (1.0 - xf) * yf
    w11 = xf * yf
    if values.ndim == 3:
        w00, w01, w10, w11 = (a[..., None] for a in (w00, w01, w10, w11))
    return (
        w00 * values[y0, x0]
        + w01 * values[y0, x1]
        + w10 * values[y1, x0]
        + w11 * values[y1, x1]
    )


# -- gnomonic projection -----------------------------------------------------


def _view_tangent_grid(view: ViewSpec):
    """Tangent-plane coordinates (a right, b up) of every view pixel center."""
    t = math.tan(math.radians(view.fov_deg) / 2.0)
    a = (2.0 * (np.arange(view.width) + 0.5) / view.width - 1.0) * t
    b = (1.0 - 2.0 * (np.arange(view.height) + 0.5) / view.height) * t
    return a[None, :], b[:, None], t


def _view_pixel_sphere(view: ViewSpec):
    """Per-pixel (dlon, lat) in radians for a view raster.

    dlon is the longitude offset from the view center; keeping it relative
    makes the result independent of the center's absolute longitude.
    """
    a, b, _ = _view_tangent_grid(view)
    sin0 = _sind(view.lat)
    cos0 = _cosd(view.lat)
    denom = np.sqrt(1.0 + a * a + b * b)
    lat = np.arcsin(np.clip((sin0 + b * cos0) / denom, -1.0, 1.0))
    dlon = np.broadcast_to(np.arctan2(a, cos0 - b * sin0), lat.shape)
    return dlon, lat


def project_view(img: np.ndarray, view: ViewSpec, mask: np.ndarray = None):
    """Extract a gnomonic NFoV raster from an equirectangular image.

    Returns the view raster, or (raster, view_mask) when ``mask`` is given.
    The center pixel of an odd-sized view samples the image exactly at the
    view center (tangent-point identity).
    """
    h, w = check_equirect(img)
    if mask is not None and mask.shape != (h, w):
        raise DimensionError(f"mask shape {mask.shape} != image {(h, w)}")
    dlon, lat = _view_pixel_sphere(view)
    n0, r0 = _split_base(_center_col(view.lon, w))
    col_off = r0 + dlon * (w / (2.0 * np.pi))
    rows = (np.pi / 2 - lat) * (h / np.pi) - 0.5
    return _bilinear_wrap(img, n0, col_off, rows, mask)


def _equirect_to_view_coords(view: ViewSpec, pano_width: int):
    """Map every pano pixel center to view raster coordinates.

    Returns (xs, ys, inside): view pixel positions and the exact frustum
    membership mask (ray in front of the tangent plane and within the
    square tangent extent).
    """
    if pano_width % 2 or pano_width < 8:
        raise DimensionError(f"panorama width must be even and >= 8, got {pano_width}")
    w = pano_width
    h = w // 2
    _, _, t = _view_tangent_grid(view)
    sin0 = _sind(view.lat)
    cos0 = _cosd(view.lat)

    n0, r0 = _split_base(_center_col(view.lon, w))
    u = np.arange(w, dtype=np.int64)
    di = (u - n0 + w // 2) % w - w // 2
    dlon = (di - r0) * (2.0 * np.pi / w)
    lat = np.pi / 2 - (np.arange(h) + 0.5) * (np.pi / h)

    sin_lat = np.sin(lat)[:, None]
    cos_lat = np.cos(lat)[:, None]
    sin_dl = np.sin(dlon)[None, :]
    cos_dl = np.cos(dlon)[None, :]

    cos_c = sin0 * sin_lat + cos0 * (cos_lat * cos_dl)
    front = cos_c > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(front, cos_lat * sin_dl / cos_c, np.inf)
        b = np.where(front, (cos0 * sin_lat - sin0 * (cos_lat * cos_dl)) / cos_c, np.inf)
    inside = front & (np.abs(a) <= t) & (np.abs(b) <= t)
    xs = (a / t + 1.0) * 0.5 * view.width - 0.5
    ys = (1.0 - b / t) * 0.5 * view.height - 0.5
    return xs, ys, inside


def view_footprint(view: ViewSpec, pano_width: int) -> np.ndarray:
    """Boolean equirect mask of pano pixels whose ray lies in the frustum."""
    _, _, inside = _equirect_to_view_coords(view, pano_width)
    return inside


def backproject_view(nfov: np.ndarray, view: ViewSpec, pano_width: int):
    """Inverse gnomonic projection of an NFoV raster onto the sphere.

    Returns (equirect, coverage): pixels outside the frustum hold 0 and
    coverage False. Out-of-scope content is represented by the mask, never
    by a sentinel value.
    """
    if nfov.shape[:2] != (view.height, view.width):
        raise DimensionError(
            f"nfov shape {nfov.shape[:2]} != view raster {(view.height, view.width)}"
        )
    xs, ys, inside = _equirect_to_view_coords(view, pano_width)
    if not inside.any():
        raise GeometryError(
            "view frustum misses every panorama pixel center; "
            "fov is below the panorama pixel pitch"
        )
    h, w = inside.shape
    iy, ix = np.nonzero(inside)
    sampled = _bilinear_clamp(nfov, xs[iy, ix], ys[iy, ix])
    shape = (h, w) if nfov.ndim == 2 else (h, w, nfov.shape[2])
    out = np.zeros(shape, dtype=np.float64)
    out[iy, ix] = sampled
    return out, inside


# -- cubemap -----------------------------------------------------------------


def equirect_to_cubemap(img: np.ndarray, face_size: int) -> Cubemap:
    """Resample an equirectangular image into six 90-degree cube faces."""
    check_equirect(img)
    if face_size < 8:
        raise DimensionError(f"face_size must be >= 8, got {face_size}")
    faces = {f: project_view(img, face_view(f, face_size)) for f in FACES}
    return Cubemap(faces)


def cubemap_to_equirect(cube: Cubemap, width: int) -> np.ndarray:
    """Resample a cubemap back to an equirectangular raster.

    Each pano ray is assigned to exactly one face by the max-|component|
    rule (ties resolved in x, y, z priority) and sampled bilinearly with
    border clamp inside that face.
    """
    if width % 2 or width < 8:
        raise DimensionError(f"width must be even and >= 8, got {width}")
    h = width // 2
    lon = (np.arange(width) + 0.5) * (2.0 * np.pi / width) - np.pi
    lat = np.pi / 2 - (np.arange(h) + 0.5) * (np.pi / h)
    cos_lat = np.cos(lat)[:, None]
    x = cos_lat * np.sin(lon)[None, :]
    y = np.broadcast_to(np.sin(lat)[:, None], (h, width))
    z = cos_lat * np.cos(lon)[None, :]

    axis = np.argmax(np.stack([np.abs(x), np.abs(y), np.abs(z)]), axis=0)
    sample = cube.faces["F"]
    size = cube.face_size
    shape = (h, width) if sample.ndim == 2 else (h, width, sample.shape[2])
    out = np.zeros(shape, dtype=np.float64)

    # Per-face local coordinates a (right), b (up) after perspective divide.
    selectors = {
        "R": (axis == 0) & (x > 0),
        "L": (axis == 0) & (x <= 0),
        "U": (axis == 1) & (y > 0),
        "D": (axis == 1) & (y <= 0),
        "F": (axis == 2) & (z > 0),
        "B": (axis == 2) & (z <= 0),
    }
    local = {
        "F": lambda d: (d[0] / d[2], d[1] / d[2]),
        "B": lambda d: (d[0] / d[2], -d[1] / d[2]),
        "R": lambda d: (-d[2] / d[0], d[1] / d[0]),
        "L": lambda d: (-d[2] / d[0], -d[1] / d[0]),
        "U": lambda d: (d[0] / d[1], -d[2] / d[1]),
        "D": lambda d: (-d[0] / d[1], -d[2] / d[1]),
    }
    for f in FACES:
        sel = selectors[f]
        if not sel.any():
            continue
        dx, dy, dz = x[sel], y[sel], z[sel]
        a, b = local[f]((dx, dy, dz))
        px = (a + 1.0) * 0.5 * size - 0.5
        py = (1.0 - b) * 0.5 * size - 0.5
        out[sel] = _bilinear_clamp(cube.faces[f], px, py)
    return out


# -- rotation ----------------------------------------------------------------


def rotate_horizontal(img: np.ndarray, delta_lon: float) -> np.ndarray:
    """Rotate an equirect raster about the polar axis.

    The result at longitude w equals the input at w + delta_lon. When
    delta_lon is an integer multiple of the column pitch (360 / W) this is
    an exact cyclic column shift; otherwise columns are blended bilinearly
    in longitude.
    """
    _, w = check_equirect(img)
    shift = delta_lon * w / 360.0
    si = math.floor(shift)
    frac = shift - si
    if frac == 0.0:
        return np.roll(img, -int(si), axis=1)
    return (1.0 - frac) * np.roll(img, -int(si), axis=1) + frac * np.roll(
        img, -int(si) - 1, axis=1
    )


# -- geometry maps -----------------------------------------------------------


def geometry_map_for(target, face_size: int = None, channels: int = 4) -> np.ndarray:
    """Per-pixel spherical-coordinate encoding of a view or cube face.

    Returns (H, W, 4) with channels (cos lon, sin lon, sin lat, cos lat),
    or (H, W, 2) with (cos lon, sin lat) when channels=2.
    """
    if isinstance(target, str):
        if face_size is None:
            raise GeometryError("face geometry map needs a face_size")
        target = face_view(target, face_size)
    if channels not in (2, 4):
        raise GeometryError(f"geometry map supports 2 or 4 channels, got {channels}")
    dlon, lat = _view_pixel_sphere(target)
    lon = math.radians(target.lon) + dlon
    if channels == 4:
        return np.stack([np.cos(lon), np.sin(lon), np.sin(lat), np.cos(lat)], axis=-1)
    return np.stack([np.cos(lon), np.sin(lat)], axis=-1)
