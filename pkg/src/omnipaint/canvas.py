"""The growing panorama state and its hard-selection compositing algebra.

A Panorama couples an equirectangular raster with a known/unknown mask.
Compositing is per-pixel hard selection: the left operand wins wherever it
is known, so already-generated content is immutable. Content entering the
canvas through ``attach_view``/``init_from_nfov`` is quantized to the
8-bit lattice (k/255); the in-memory state therefore never diverges from
its PNG persistence, which is what makes replay bit-exact.

Panorama values are immutable; every operation returns a new state.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError
from .geometry import ViewSpec, backproject_view, latitude_weights, rotate_horizontal


def quantize(values: np.ndarray) -> np.ndarray:
    """Snap raster values onto the 8-bit lattice in [0, 1]."""
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0) / 255.0


def known_fraction(mask: np.ndarray) -> float:
    """Solid-angle-weighted fraction of known pixels.

    cos(lat) row weights correct the polar oversampling of the
    equirectangular grid. Exactly 1.0 iff every pixel is known: the
    numerator and denominator then reduce over identical arrays.
    """
    h, w = mask.shape
    wgt = latitude_weights(h)
    counts = mask.sum(axis=1, dtype=np.int64).astype(np.float64)
    full = np.full(h, float(w))
    return float(np.dot(counts, wgt) / np.dot(full, wgt))


@dataclass(frozen=True)
class Panorama:
    """Equirect image + known mask; unknown pixels are normalized to 0."""

    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.image.ndim != 3:
            raise DimensionError(f"panorama image must be (H, W, C), got {self.image.shape}")
        h, w = self.image.shape[:2]
        if w != 2 * h or w < 2:
            raise DimensionError(f"panorama width must be 2x height, got {w}x{h}")
        if self.mask.shape != (h, w) or self.mask.dtype != np.bool_:
            raise DimensionError(
                f"mask must be bool {(h, w)}, got {self.mask.dtype} {self.mask.shape}"
            )
        img = np.where(self.mask[..., None], self.image, 0.0)
        img.setflags(write=False)
        m = self.mask.copy()
        m.setflags(write=False)
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "mask", m)

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def channels(self) -> int:
        return self.image.shape[2]

    @cached_property
    def known_fraction(self) -> float:
        return known_fraction(self.mask)

    @property
    def complete(self) -> bool:
        return self.known_fraction == 1.0

    @classmethod
    def empty(cls, width: int, channels: int = 3) -> "Panorama":
        if width % 2:
            raise DimensionError(f"panorama width must be even, got {width}")
        h = width // 2
        return cls(np.zeros((h, width, channels)), np.zeros((h, width), dtype=bool))


def compose(alpha: Panorama, beta: Panorama) -> Panorama:
    """Hard-selection compositing: alpha wherever alpha is known, else beta."""
    if alpha.image.shape != beta.image.shape:
        raise DimensionError(
            f"panorama shapes differ: {alpha.image.shape} vs {beta.image.shape}"
        )
    img = np.where(alpha.mask[..., None], alpha.image, beta.image)
    return Panorama(img, alpha.mask | beta.mask)


def attach_view(state: Panorama, nfov: np.ndarray, view: ViewSpec) -> Panorama:
    """Backproject a completed NFoV raster and fuse it into the canvas.

    Existing known pixels always win; only previously-unknown pixels take
    the new content, so the canvas is monotone.
    """
    bp, cov = backproject_view(nfov, view, state.width)
    return compose(state, Panorama(quantize(bp), cov))


def init_from_nfov(nfov: np.ndarray, view: ViewSpec, pano_width: int) -> Panorama:
    """Seed a fresh panorama whose known region is exactly the view frustum."""
    bp, cov = backproject_view(nfov, view, pano_width)
    return Panorama(quantize(bp), cov)


def rotate_panorama(pano: Panorama, delta_lon: float) -> Panorama:
    """Rotate state and mask about the polar axis.

    Only exact multiples of the column pitch are allowed: a fractional
    rotation would have to blend the boolean mask.
    """
    shift = delta_lon * pano.width / 360.0
    if shift != round(shift):
        raise DimensionError(
            f"rotation {delta_lon} deg is not a multiple of the column pitch"
        )
    img = rotate_horizontal(pano.image, delta_lon)
    msk = np.roll(pano.mask, -int(round(shift)), axis=1)
    return Panorama(img, msk)
