"""Planar floating-point images: representation, arithmetic, resize and file I/O.

Images are stored channel-major (``(channels, height, width)``) in float64
with intensities nominally in [0, 1].  All operations here are pure: images
are immutable after construction and safe to share across threads.

Supported files: PNG (8 or 16 bits per sample) and binary PPM (P6) for
reading; 8-bit PNG for writing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import cv2
import numpy as np

from .errors import DimensionError, FormatError, NonFiniteError, ShapeError

# Rec.601 luma coefficients; the standard convention for grayscale reduction.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Minimum side length accepted from file loaders (windowed metrics and the
# scale pyramid need at least 8 px).
MIN_LOADED_SIDE = 8


class PixelCoord(NamedTuple):
    """Integer pixel position (column x, row y)."""

    x: int
    y: int


@dataclass(frozen=True)
class ImageF:
    """Immutable planar float image, shape ``(channels, height, width)``."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"expected (channels, h, w) array, got shape {arr.shape}")
        c, h, w = arr.shape
        if c not in (1, 3):
            raise ShapeError(f"channel count must be 1 or 3, got {c}")
        if h < 2 or w < 2:
            raise DimensionError(f"image too small: {h}x{w}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("image contains NaN or Inf")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def plane(self, i: int = 0) -> np.ndarray:
        """Single channel as a read-only (h, w) array."""
        return self.data[i]

    def to_interleaved(self) -> np.ndarray:
        """Copy as (h, w) for grayscale or (h, w, 3) for color."""
        if self.channels == 1:
            return self.data[0].copy()
        return np.moveaxis(self.data, 0, -1).copy()

    @staticmethod
    def from_interleaved(arr: np.ndarray) -> "ImageF":
        """Build from (h, w) or (h, w, c) layout."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            return ImageF(a[np.newaxis])
        if a.ndim == 3:
            return ImageF(np.moveaxis(a, -1, 0))
        raise ShapeError(f"expected 2-D or 3-D array, got shape {a.shape}")


def _sniff_format(blob: bytes) -> str:
    if blob[:8] == b"\x89PNG\r\n\x1a\n":
        return "png"
    if blob[:2] == b"P6":
        return "ppm"
    raise FormatError("unsupported encoding (expected PNG or binary PPM P6)")


def load_image(path: Union[str, Path]) -> ImageF:
    """Read an 8/16-bit PNG or binary PPM, scaled to [0, 1].

    Intensities are divided by the sample maximum (255 or 65535); the channel
    count of the file is preserved.
    """
    path = Path(path)
    blob = path.read_bytes()  # propagates OSError for missing/unreadable files
    _sniff_format(blob)
    raw = cv2.imdecode(np.frombuffer(blob, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"could not decode {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"unsupported sample type {raw.dtype} in {path}")
    if raw.ndim == 3:
        if raw.shape[2] != 3:
            raise FormatError(f"unsupported channel count {raw.shape[2]} in {path}")
        raw = raw[:, :, ::-1]  # BGR -> RGB
    h, w = raw.shape[:2]
    if h < MIN_LOADED_SIDE or w < MIN_LOADED_SIDE:
        raise DimensionError(f"{path} is {h}x{w}; at least 8x8 required")
    return ImageF.from_interleaved(raw.astype(np.float64) / scale)


def save_image(img: ImageF, path: Union[str, Path]) -> None:
    """Write as 8-bit PNG; values quantized as round(clamp(v, 0, 1) * 255)."""
    q = np.rint(np.clip(img.to_interleaved(), 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.ndim == 3:
        q = q[:, :, ::-1]  # RGB -> BGR
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise OSError(f"PNG encoding failed for {path}")
    Path(path).write_bytes(buf.tobytes())


def _second_operand_plane(b) -> np.ndarray:
    """Accept an ImageF or any halo-layer-like object carrying `.values`."""
    if isinstance(b, ImageF):
        return b.data if b.channels > 1 else b.data[0]
    values = getattr(b, "values", None)
    if values is None:
        raise ShapeError(f"cannot multiply with {type(b).__name__}")
    return np.asarray(values, dtype=np.float64)


def elementwise_mul(a: ImageF, b) -> ImageF:
    """Pixel-by-pixel product; a 1-channel operand broadcasts across channels.

    No clamping is applied; ``b`` may be an ImageF or a halo layer.
    """
    other = _second_operand_plane(b)
    if other.ndim == 2:
        if other.shape != (a.height, a.width):
            raise ShapeError(f"size mismatch: {other.shape} vs {(a.height, a.width)}")
        return ImageF(a.data * other[np.newaxis])
    if other.shape != a.data.shape:
        raise ShapeError(f"shape mismatch: {other.shape} vs {a.data.shape}")
    return ImageF(a.data * other)


def to_luminance(img: ImageF) -> ImageF:
    """Rec.601 luminance (0.299 R + 0.587 G + 0.114 B); 1-channel images pass through."""
    if img.channels == 1:
        return img
    r, g, b = img.data
    lum = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return ImageF(lum[np.newaxis])


def interp_matrix(src: int, dst: int) -> np.ndarray:
    """Align-corners bilinear interpolation matrix, shape (dst, src).

    Row j holds the convex weights of source samples for output j, using the
    convention source_coord = j * (src - 1) / (dst - 1).  Edge-clamped; each
    row sums to 1, so constants are preserved and no overshoot can occur.
    """
    m = np.zeros((dst, src))
    if src == 1 or dst == 1:
        # Degenerate axes collapse to the first source sample.
        m[:, 0] = 1.0
        return m
    pos = np.arange(dst) * ((src - 1) / (dst - 1))
    i0 = np.clip(np.floor(pos).astype(np.intp), 0, src - 1)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = pos - i0
    rows = np.arange(dst)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def resize_bilinear(img: ImageF, new_h: int, new_w: int) -> ImageF:
    """Bilinear resize with align-corners convention and edge clamping."""
    if new_h < 2 or new_w < 2:
        raise DimensionError(f"target size {new_h}x{new_w} too small")
    my = interp_matrix(img.height, new_h)
    mx = interp_matrix(img.width, new_w)
    out = np.matmul(np.matmul(my, img.data), mx.T)
    return ImageF(out)
