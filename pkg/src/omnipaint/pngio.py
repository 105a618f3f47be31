"""PNG persistence for rasters and masks.

Rasters store as 8-bit RGB (or grayscale) with values mapped linearly to
[0, 1]; masks as single-channel 8-bit, 0 = unknown and 255 = known.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .canvas import Panorama
from .errors import DimensionError


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(arr: np.ndarray) -> bytes:
    """Float raster in [0, 1] -> PNG bytes."""
    buf = io.BytesIO()
    Image.fromarray(to_uint8(arr)).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """PNG bytes -> float (H, W, 3) raster in [0, 1]."""
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def encode_mask_png(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(
        buf, format="PNG"
    )
    return buf.getvalue()


def decode_mask_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("L")
    return np.asarray(img) >= 128


def save_image(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_png(arr))


def load_image(path) -> np.ndarray:
    return decode_png(Path(path).read_bytes())


def save_mask(path, mask: np.ndarray) -> None:
    Path(path).write_bytes(encode_mask_png(mask))


def load_mask(path) -> np.ndarray:
    return decode_mask_png(Path(path).read_bytes())


def save_panorama(pano: Panorama, image_path, mask_path, meta_path=None) -> None:
    """Write the state.png + mask.png pair and optional sidecar JSON."""
    save_image(image_path, pano.image)
    save_mask(mask_path, pano.mask)
    if meta_path is not None:
        meta = {
            "known_fraction": pano.known_fraction,
            "width": pano.width,
            "height": pano.height,
        }
        Path(meta_path).write_text(json.dumps(meta, indent=2))


def load_panorama(image_path, mask_path) -> Panorama:
    img = load_image(image_path)
    mask = load_mask(mask_path)
    if mask.shape != img.shape[:2]:
        raise DimensionError(
            f"mask {mask.shape} does not match image {img.shape[:2]}"
        )
    return Panorama(img, mask)
