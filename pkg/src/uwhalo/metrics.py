"""Full-reference and no-reference image quality metrics.

Full-reference: MSE, PSNR, SSIM, PCQI.  No-reference: 8-bit Shannon entropy,
UIQM and UCIQE.  Constants follow the standard literature definitions so that
numbers are comparable across implementations:

  SSIM   11x11 Gaussian window sigma 1.5, K1 = 0.01, K2 = 0.03, range 1.
  PCQI   same window on a 0..255 luminance scale, C = 3, L = 256;
         reference-first and (unlike the others) asymmetric.
  UIQM   0.0282 * UICM + 0.2953 * UISM + 3.5753 * UIConM with
         alpha-trimmed chroma statistics (alpha = 0.1), Sobel-weighted
         8x8-block EME sharpness, and 8x8-block log-AMEE contrast.
  UCIQE  0.4680 * sigma_chroma + 0.2745 * contrast_L + 0.2576 * mean_sat
         in CIELab (sRGB, D65); luminance contrast is the 1..99 percentile
         spread of L / 100.

Report conventions: the ``mse`` column in reports is scaled by 100 (the usual
table convention for [0,1] images); the raw mean squared error is emitted
alongside as ``mse_raw``.  PSNR of (near-)identical images is capped at
120 dB.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage, signal

from .errors import DimensionError, ShapeError
from .imgcore import ImageF, to_luminance

PSNR_CAP = 120.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PCQI_C = 3.0
PCQI_L = 256.0
UIQM_C = (0.0282, 0.2953, 3.5753)
UICM_COEFFS = (-0.0268, 0.1586)
UIQM_ALPHA = 0.1
UIQM_BLOCK = 8
UCIQE_C = (0.4680, 0.2745, 0.2576)

REPORT_COLUMNS = ("mse", "psnr", "ssim", "pcqi", "entropy", "uiqm", "uciqe")


def _check_same_shape(a: ImageF, b: ImageF) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def mse(a: ImageF, b: ImageF) -> float:
    """Raw mean squared error over all samples (reports scale this by 100)."""
    _check_same_shape(a, b)
    d = a.data - b.data
    return float(np.mean(d * d))


def psnr(a: ImageF, b: ImageF) -> float:
    """10*log10(1 / MSE) for unit dynamic range, capped at 120 dB."""
    raw = mse(a, b)
    if raw < 1e-12:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / raw)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian kernel (sum 1)."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return signal.correlate2d(img, kernel, mode="valid")


def _local_stats(x: np.ndarray, y: np.ndarray, kernel: np.ndarray):
    mu_x = _filter_valid(x, kernel)
    mu_y = _filter_valid(y, kernel)
    var_x = _filter_valid(x * x, kernel) - mu_x * mu_x
    var_y = _filter_valid(y * y, kernel) - mu_y * mu_y
    cov = _filter_valid(x * y, kernel) - mu_x * mu_y
    return mu_x, mu_y, var_x, var_y, cov


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Local SSIM over valid 11x11 Gaussian windows of two 2-D arrays."""
    kernel = gaussian_window()
    mu_x, mu_y, var_x, var_y, cov = _local_stats(x, y, kernel)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    return ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )


def ssim(a: ImageF, b: ImageF) -> float:
    """Mean local SSIM on luminance; requires sides >= 11 px."""
    _check_same_shape(a, b)
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs at least {SSIM_WINDOW} px per side")
    x = to_luminance(a).plane(0)
    y = to_luminance(b).plane(0)
    return float(np.mean(ssim_map(x, y)))


def pcqi(reference: ImageF, test: ImageF) -> float:
    """Patch-based contrast quality index (reference first; asymmetric).

    Mean over sliding 11x11 windows of q_i * q_c * q_s: mean-intensity,
    contrast-change and structure terms of the standard construction,
    evaluated on a 0..255 luminance scale.
    """
    _check_same_shape(reference, test)
    if reference.height < SSIM_WINDOW or reference.width < SSIM_WINDOW:
        raise DimensionError(f"PCQI needs at least {SSIM_WINDOW} px per side")
    x = to_luminance(reference).plane(0) * 255.0
    y = to_luminance(test).plane(0) * 255.0
    kernel = gaussian_window()
    mu_x, mu_y, var_x, var_y, cov = _local_stats(x, y, kernel)
    var_x = np.maximum(var_x, 0.0)
    var_y = np.maximum(var_y, 0.0)
    q_c = (4.0 / np.pi) * np.arctan((cov + PCQI_C) / (var_x + PCQI_C))
    q_s = (cov + PCQI_C) / (np.sqrt(var_x) * np.sqrt(var_y) + PCQI_C)
    q_i = np.exp(-np.abs(mu_x - mu_y) / PCQI_L)
    return float(np.mean(q_c * q_s * q_i))


def entropy8(img: ImageF) -> float:
    """Shannon entropy (bits) of the 256-bin histogram of 8-bit luminance."""
    lum = to_luminance(img).plane(0)
    q = np.rint(np.clip(lum, 0.0, 1.0) * 255.0).astype(np.intp)
    counts = np.bincount(q.ravel(), minlength=256)
    p = counts[counts > 0] / q.size
    return float(-np.sum(p * np.log2(p)))


# --- UIQM --------------------------------------------------------------------

def _trimmed_stats(x: np.ndarray, alpha: float = UIQM_ALPHA) -> Tuple[float, float]:
    """Asymmetric alpha-trimmed mean and the untrimmed second moment about it."""
    flat = np.sort(x.ravel())
    n = flat.size
    t_lo = math.ceil(alpha * n)
    t_hi = math.floor(alpha * n)
    kept = flat[t_lo : n - t_hi]
    mu = float(kept.mean())
    s2 = float(np.mean((x - mu) ** 2))
    return mu, s2


def uicm(img: ImageF) -> float:
    """Colorfulness from RG / YB opponent chroma statistics."""
    r, g, b = img.data
    rg = r - g
    yb = (r + g) / 2.0 - b
    mu_rg, s2_rg = _trimmed_stats(rg)
    mu_yb, s2_yb = _trimmed_stats(yb)
    return UICM_COEFFS[0] * math.hypot(mu_rg, mu_yb) + UICM_COEFFS[1] * math.sqrt(
        s2_rg + s2_yb
    )


def _eme(chan: np.ndarray, block: int = UIQM_BLOCK) -> float:
    """2/K * sum of log(max/min) over blocks; blocks touching zero are skipped."""
    h, w = chan.shape
    k2, k1 = h // block, w // block
    trimmed = chan[: k2 * block, : k1 * block]
    blocks = trimmed.reshape(k2, block, k1, block)
    bmax = blocks.max(axis=(1, 3))
    bmin = blocks.min(axis=(1, 3))
    valid = bmin > 1e-12
    total = float(np.sum(np.log(bmax[valid] / bmin[valid])))
    return 2.0 / (k1 * k2) * total


def uism(img: ImageF) -> float:
    """Sharpness: Rec.601-weighted EME of Sobel-magnitude-weighted channels."""
    weights = (0.299, 0.587, 0.114)
    total = 0.0
    for w_c, chan in zip(weights, img.data):
        mag = np.hypot(ndimage.sobel(chan, axis=0), ndimage.sobel(chan, axis=1))
        total += w_c * _eme(mag * chan)
    return total


def uiconm(img: ImageF) -> float:
    """Contrast: block log-AMEE of the Michelson contrast on luminance."""
    lum = to_luminance(img).plane(0)
    h, w = lum.shape
    block = UIQM_BLOCK
    k2, k1 = h // block, w // block
    trimmed = lum[: k2 * block, : k1 * block]
    blocks = trimmed.reshape(k2, block, k1, block)
    bmax = blocks.max(axis=(1, 3))
    bmin = blocks.min(axis=(1, 3))
    top = bmax - bmin
    bot = bmax + bmin
    valid = (bot > 1e-12) & (top > 1e-12)
    c = top[valid] / bot[valid]
    return -1.0 / (k1 * k2) * float(np.sum(c * np.log(c)))


def uiqm(img: ImageF) -> float:
    """Underwater image quality measure (colorfulness + sharpness + contrast)."""
    if img.channels != 3:
        raise ShapeError("UIQM requires a 3-channel image")
    if img.height < 16 or img.width < 16:
        raise DimensionError("UIQM needs at least 16 px per side")
    c1, c2, c3 = UIQM_C
    return c1 * uicm(img) + c2 * uism(img) + c3 * uiconm(img)


# --- UCIQE -------------------------------------------------------------------

# High-precision sRGB -> XYZ (D65) matrix.  The reference white is taken as
# the matrix row sums so that achromatic inputs map to exactly zero chroma.
_SRGB_TO_XYZ = np.array(
    [
        [0.41239080, 0.35758434, 0.18048079],
        [0.21263901, 0.71516868, 0.07219232],
        [0.01933082, 0.11919478, 0.95053215],
    ]
)
_XYZ_WHITE = _SRGB_TO_XYZ.sum(axis=1)


def rgb_to_lab(img: ImageF) -> np.ndarray:
    """sRGB in [0,1] to CIELab (D65); returns (3, h, w) with L in [0, 100]."""
    rgb = np.clip(img.data, 0.0, 1.0)
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = np.einsum("ij,jhw->ihw", _SRGB_TO_XYZ, linear) / _XYZ_WHITE[:, None, None]
    delta = 6.0 / 29.0
    f = np.where(xyz > delta**3, np.cbrt(xyz), xyz / (3 * delta**2) + 4.0 / 29.0)
    fx, fy, fz = f
    lab = np.empty_like(f)
    lab[0] = 116.0 * fy - 16.0
    lab[1] = 500.0 * (fx - fy)
    lab[2] = 200.0 * (fy - fz)
    return lab


def uciqe(img: ImageF) -> float:
    """Underwater color image quality evaluator (chroma, contrast, saturation).

    All three terms are dimensionless: chroma is divided by 100 (the same
    normalization as the luminance contrast term), and saturation
    C / sqrt(C^2 + L^2) is scale-free, so scores land in the usual
    0..~0.8 band.
    """
    if img.channels != 3:
        raise ShapeError("UCIQE requires a 3-channel image")
    if img.height < 8 or img.width < 8:
        raise DimensionError("UCIQE needs at least 8 px per side")
    lab = rgb_to_lab(img)
    lum, a, b = lab
    chroma = np.hypot(a, b)
    sigma_c = float(np.std(chroma)) / 100.0
    con_l = float(np.percentile(lum, 99) - np.percentile(lum, 1)) / 100.0
    denom = np.sqrt(chroma**2 + lum**2)
    sat = np.divide(chroma, denom, out=np.zeros_like(chroma), where=denom > 1e-12)
    mu_s = float(np.mean(sat))
    c1, c2, c3 = UCIQE_C
    return c1 * sigma_c + c2 * con_l + c3 * mu_s


# --- reporting ----------------------------------------------------------------

def full_reference_row(pred: ImageF, ref: ImageF) -> Dict[str, float]:
    raw = mse(pred, ref)
    return {
        "mse": 100.0 * raw,
        "mse_raw": raw,
        "psnr": psnr(pred, ref),
        "ssim": ssim(pred, ref),
        "pcqi": pcqi(ref, pred),  # reference first
    }


def no_reference_row(img: ImageF) -> Dict[str, float]:
    return {"entropy": entropy8(img), "uiqm": uiqm(img), "uciqe": uciqe(img)}


@dataclass
class MetricReport:
    """Per-image metric rows plus aggregate statistics.

    CSV column order is fixed: mse (x100), psnr, ssim, pcqi, entropy, uiqm,
    uciqe; the unscaled mse_raw column is appended after them.
    """

    rows: List[Tuple[str, Dict[str, float]]] = field(default_factory=list)

    def add(self, name: str, values: Dict[str, float]) -> None:
        self.rows.append((name, values))

    def aggregates(self) -> Dict[str, Dict[str, float]]:
        out: Dict[str, Dict[str, float]] = {}
        for col in REPORT_COLUMNS + ("mse_raw",):
            vals = [row[col] for _, row in self.rows if col in row]
            if vals:
                # sort first so aggregates are independent of row order
                ordered = np.sort(vals)
                out[col] = {
                    "mean": float(np.mean(ordered)),
                    "median": float(np.median(ordered)),
                }
        return out

    def to_csv_text(self) -> str:
        cols = REPORT_COLUMNS + ("mse_raw",)
        lines = ["image," + ",".join(cols)]
        for name, row in self.rows:
            cells = [name]
            for col in cols:
                cells.append(f"{row[col]:.9g}" if col in row else "")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_json_text(self) -> str:
        payload = {
            "conventions": {
                "mse": "mean squared error x 100 (see mse_raw for the raw value)",
                "psnr_cap_db": PSNR_CAP,
            },
            "images": {name: row for name, row in self.rows},
            "aggregates": self.aggregates(),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
