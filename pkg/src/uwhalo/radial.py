"""Light-center estimation, radial gradients and parametric halo layers.

The radial gradient of a field v about a light center (x0, y0) is the
directional derivative along the ray from the center to each pixel,

    psi(x, y) = (dv/dx * (x - x0) + dv/dy * (y - y0)) / |r|,
    r = [x - x0, y - y0],

with psi forced to 0 where |r| < 0.5 px (and at the pixel containing the
center) to remove the singularity at the origin.  Spatial derivatives use
central differences in the interior and one-sided differences on the border.

Halo layers are smooth multiplicative attenuation fields v in (0, 1] that
are radially non-increasing about their center; multiplying a clean image by
such a layer simulates the bright spot produced by an artificial light source.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import cv2
import numpy as np

from .errors import FormatError, ParamError, ShapeError
from .imgcore import ImageF, elementwise_mul, to_luminance

# Lower bound applied to every halo layer; keeps the later element-wise
# division bounded by 1000x.
V_FLOOR = 1e-3

HALO_MODELS = ("gaussian", "cosine4", "flat", "profile")


@dataclass(frozen=True)
class LightCenter:
    """Sub-pixel light-source position (column x0, row y0)."""

    x0: float
    y0: float

    def clamped(self, height: int, width: int) -> "LightCenter":
        return LightCenter(
            float(np.clip(self.x0, 0.0, width - 1.0)),
            float(np.clip(self.y0, 0.0, height - 1.0)),
        )

    def distance_to(self, other: "LightCenter") -> float:
        return math.hypot(self.x0 - other.x0, self.y0 - other.y0)


@dataclass(frozen=True)
class RadialField:
    """Per-pixel radial gradient values about a light center."""

    values: np.ndarray  # (h, w)
    center: LightCenter

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class HaloLayer:
    """Multiplicative attenuation field with its light center.

    Factory functions (synth_halo, the blind separator) additionally
    guarantee max == 1, values >= V_FLOOR, and a radially non-increasing
    profile; the raw constructor only enforces finite values in (0, 1].
    """

    values: np.ndarray  # (h, w)
    center: LightCenter
    model_tag: str = "profile"

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if arr.ndim != 2:
            raise ShapeError(f"halo layer must be 2-D, got shape {arr.shape}")
        if self.model_tag not in HALO_MODELS:
            raise ParamError(f"unknown model tag {self.model_tag!r}")
        if not np.all(np.isfinite(arr)):
            raise ParamError("halo layer contains NaN or Inf")
        if arr.min() <= 0.0 or arr.max() > 1.0 + 1e-12:
            raise ParamError("halo values must lie in (0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class HaloParams:
    """Parametric falloff description used by synth_halo."""

    model_tag: str = "gaussian"
    sigma: float = 20.0  # falloff scale in pixels
    ambient: float = 0.2  # asymptotic floor in [V_FLOOR, 1)
    beta: float = 1.0  # shape exponent >= 0.5

    def validate(self) -> None:
        if self.model_tag not in ("gaussian", "cosine4", "flat"):
            raise ParamError(f"unknown halo model {self.model_tag!r}")
        if not (self.sigma > 0.0):
            raise ParamError("sigma must be positive")
        if not (V_FLOOR <= self.ambient < 1.0):
            raise ParamError("ambient must lie in [V_FLOOR, 1)")
        if not (self.beta >= 0.5):
            raise ParamError("beta must be >= 0.5")


def radius_grid(height: int, width: int, center: LightCenter) -> np.ndarray:
    """Euclidean distance of every pixel to the center, shape (h, w)."""
    ys = np.arange(height, dtype=np.float64)[:, np.newaxis]
    xs = np.arange(width, dtype=np.float64)[np.newaxis, :]
    return np.hypot(xs - center.x0, ys - center.y0)


def estimate_center(img: ImageF, top_fraction: float = 0.01) -> LightCenter:
    """Intensity centroid of the brightest top_fraction of pixels.

    Equal-luminance pixels at the selection threshold are admitted in
    row-major order.  A constant image has no meaningful bright region; the
    geometric image center is returned and a RuntimeWarning is emitted.
    """
    if not (0.0 < top_fraction <= 1.0):
        raise ParamError("top_fraction must be in (0, 1]")
    lum = to_luminance(img).plane(0)
    h, w = lum.shape
    if lum.max() - lum.min() < 1e-12:
        warnings.warn("constant image: using geometric center", RuntimeWarning)
        return LightCenter((w - 1) / 2.0, (h - 1) / 2.0)
    n_top = int(math.ceil(top_fraction * lum.size))
    flat = lum.ravel()
    # Stable sort on the negated values keeps row-major order among ties.
    order = np.argsort(-flat, kind="stable")[:n_top]
    weights = flat[order]
    ys, xs = np.unravel_index(order, lum.shape)
    total = weights.sum()
    if total <= 0.0:
        warnings.warn("all selected pixels are black: using geometric center", RuntimeWarning)
        return LightCenter((w - 1) / 2.0, (h - 1) / 2.0)
    x0 = float(np.dot(weights, xs) / total)
    y0 = float(np.dot(weights, ys) / total)
    return LightCenter(x0, y0).clamped(h, w)


def _psi_direction(height: int, width: int, center: LightCenter):
    """Unit radial direction (ux, uy) and the near-center zero mask."""
    ys = np.arange(height, dtype=np.float64)[:, np.newaxis]
    xs = np.arange(width, dtype=np.float64)[np.newaxis, :]
    dx = xs - center.x0
    dy = ys - center.y0
    r = np.hypot(dx, dy)
    mask = r < 0.5
    cy = int(np.clip(round(center.y0), 0, height - 1))
    cx = int(np.clip(round(center.x0), 0, width - 1))
    mask[cy, cx] = True  # the pixel containing the center is always zeroed
    safe = np.where(mask, 1.0, r)
    return dx / safe, dy / safe, mask


def psi_array(field: np.ndarray, center: LightCenter) -> np.ndarray:
    """Radial gradient of a 2-D array (see module docstring)."""
    gy, gx = np.gradient(field)
    ux, uy, mask = _psi_direction(field.shape[0], field.shape[1], center)
    psi = gx * ux + gy * uy
    psi[mask] = 0.0
    return psi


def radial_gradient(field: ImageF, center: LightCenter) -> RadialField:
    """Radial gradient of a 1-channel image about the given center."""
    if field.channels != 1:
        raise ShapeError("radial_gradient expects a 1-channel field")
    c = center.clamped(field.height, field.width)
    return RadialField(psi_array(field.plane(0), c), c)


def synth_halo(height: int, width: int, params: HaloParams, center: LightCenter) -> HaloLayer:
    """Generate a parametric halo layer, normalized to max 1 and floored.

    Radial profiles:
      gaussian:  v(r) = a + (1 - a) * exp(-(r / sigma) ** (2 * beta))
      cosine4:   v(r) = a + (1 - a) * cos(min(pi/2, r / (2 * sigma))) ** 4
      flat:      v = 1
    """
    params.validate()
    if params.model_tag == "flat":
        return HaloLayer(np.ones((height, width)), center.clamped(height, width), "flat")
    c = center.clamped(height, width)
    r = radius_grid(height, width, c)
    a = params.ambient
    if params.model_tag == "gaussian":
        prof = a + (1.0 - a) * np.exp(-((r / params.sigma) ** (2.0 * params.beta)))
    else:  # cosine4
        t = np.minimum(np.pi / 2.0, r / (2.0 * params.sigma))
        prof = a + (1.0 - a) * np.cos(t) ** 4
    prof /= prof.max()
    prof = np.maximum(prof, V_FLOOR)
    return HaloLayer(prof, c, params.model_tag)


def apply_halo(img: ImageF, halo: HaloLayer) -> ImageF:
    """Multiply an image by a halo layer (broadcast) and clamp to [0, 1]."""
    if (halo.height, halo.width) != (img.height, img.width):
        raise ShapeError(
            f"halo {halo.height}x{halo.width} vs image {img.height}x{img.width}"
        )
    out = elementwise_mul(img, halo)
    return ImageF(np.clip(out.data, 0.0, 1.0))


# --- halo layer serialization: 16-bit PNG + plain-text sidecar ---------------

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".halo.txt")


def save_halo(halo: HaloLayer, path: Union[str, Path], params: HaloParams | None = None) -> None:
    """Write a halo layer as 1-channel 16-bit PNG plus a key-value sidecar."""
    path = Path(path)
    q = np.rint(np.clip(halo.values, 0.0, 1.0) * 65535.0).astype(np.uint16)
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise OSError(f"PNG encoding failed for {path}")
    path.write_bytes(buf.tobytes())
    p = params if params is not None else HaloParams(model_tag="gaussian")
    model = halo.model_tag if params is None else p.model_tag
    lines = [
        f"model = {model}",
        f"sigma = {p.sigma!r}",
        f"ambient = {p.ambient!r}",
        f"beta = {p.beta!r}",
        f"x0 = {halo.center.x0!r}",
        f"y0 = {halo.center.y0!r}",
    ]
    _sidecar_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_halo(path: Union[str, Path]) -> Tuple[HaloLayer, HaloParams]:
    """Read a halo layer written by save_halo."""
    path = Path(path)
    raw = cv2.imdecode(np.frombuffer(path.read_bytes(), dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None or raw.ndim != 2 or raw.dtype != np.uint16:
        raise FormatError(f"{path} is not a 1-channel 16-bit PNG")
    kv = {}
    for line in _sidecar_path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    try:
        center = LightCenter(float(kv["x0"]), float(kv["y0"]))
        params = HaloParams(
            model_tag=kv["model"],
            sigma=float(kv["sigma"]),
            ambient=float(kv["ambient"]),
            beta=float(kv["beta"]),
        )
    except KeyError as exc:
        raise FormatError(f"sidecar for {path} is missing key {exc}") from exc
    values = np.maximum(raw.astype(np.float64) / 65535.0, V_FLOOR)
    tag = params.model_tag if params.model_tag in HALO_MODELS else "profile"
    return HaloLayer(values, center, tag), params
