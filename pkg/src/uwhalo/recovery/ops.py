"""Differentiable tensor primitives with hand-derived backward passes.

All operations work on float64 arrays shaped (n, c, h, w).  Each forward has
a matching backward that consumes the upstream gradient plus whatever the
forward needed cached; every pair is covered by the finite-difference
checker in gradcheck.py.
"""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from ..imgcore import LUMA_WEIGHTS, interp_matrix
from ..metrics import SSIM_K1, SSIM_K2, gaussian_window
from ..radial import LightCenter, _psi_direction

# A feature tensor is a plain float64 ndarray shaped (n, c, h, w); shapes are
# validated at the network boundary instead of being wrapped in a class.
Tensor4 = np.ndarray

_EPS_NORM = 1e-12


# --- convolution ---------------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(n, c, h, w) -> (n, h*w, c*k*k) patch matrix with zero padding k//2."""
    n, c, h, w = x.shape
    p = k // 2
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    patches = sliding_window_view(x, (k, k), axis=(2, 3))  # (n, c, h, w, k, k)
    return patches.transpose(0, 2, 3, 1, 4, 5).reshape(n, h * w, c * k * k)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 cross-correlation; kernel size 1 or 3."""
    n, _, h, w = x.shape
    co, ci, k, _ = weight.shape
    cols = _im2col(x, k)
    out = cols @ weight.reshape(co, ci * k * k).T  # (n, h*w, co)
    out += bias
    return out.transpose(0, 2, 1).reshape(n, co, h, w)


def conv2d_backward(
    g: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dweight, dbias) of conv2d."""
    n, co, h, w = g.shape
    _, ci, k, _ = weight.shape
    g2 = g.transpose(0, 2, 3, 1).reshape(n, h * w, co)
    cols = _im2col(x, k)
    dw = np.matmul(g2.transpose(0, 2, 1), cols).sum(axis=0).reshape(weight.shape)
    db = g.sum(axis=(0, 2, 3))
    # Input gradient: same-padded conv with the spatially flipped,
    # channel-transposed kernel (valid for odd k, stride 1, pad k//2).
    w_flip = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx = conv2d(g, np.ascontiguousarray(w_flip), np.zeros(ci))
    return dx, dw, db


# --- pointwise and pooling ------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    return g * (x > 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def sigmoid_backward(g: np.ndarray, s: np.ndarray) -> np.ndarray:
    return g * s * (1.0 - s)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(n, c, h, w) -> (n, c, 1, 1)."""
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    n, c, h, w = shape
    return np.broadcast_to(g / (h * w), shape).copy()


def scale_channels(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Multiply by per-channel gains s of shape (n, c, 1, 1)."""
    return x * s


def scale_channels_backward(g, x, s) -> Tuple[np.ndarray, np.ndarray]:
    return g * s, (g * x).sum(axis=(2, 3), keepdims=True)


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts, axis=1)


def concat_channels_backward(g: np.ndarray, sizes: Sequence[int]) -> List[np.ndarray]:
    splits = np.cumsum(sizes)[:-1]
    return np.split(g, splits, axis=1)


# --- bilinear resize -------------------------------------------------------------

_matrix_cache: Dict[Tuple[int, int], np.ndarray] = {}


def _matrix(src: int, dst: int) -> np.ndarray:
    key = (src, dst)
    if key not in _matrix_cache:
        _matrix_cache[key] = interp_matrix(src, dst)
    return _matrix_cache[key]


def resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of (n, c, h, w)."""
    my = _matrix(x.shape[2], out_h)
    mx = _matrix(x.shape[3], out_w)
    return np.matmul(np.matmul(my, x), mx.T)


def resize_backward(g: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    my = _matrix(in_h, g.shape[2])
    mx = _matrix(in_w, g.shape[3])
    return np.matmul(np.matmul(my.T, g), mx)


# --- spatial gradients and the radial operator ----------------------------------

def grad_hw(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(gy, gx): central differences inside, one-sided on the borders.

    Matches numpy.gradient with edge_order=1 over the last two axes.
    """
    gy = np.empty_like(x)
    gy[..., 1:-1, :] = (x[..., 2:, :] - x[..., :-2, :]) / 2.0
    gy[..., 0, :] = x[..., 1, :] - x[..., 0, :]
    gy[..., -1, :] = x[..., -1, :] - x[..., -2, :]
    gx = np.empty_like(x)
    gx[..., 1:-1] = (x[..., 2:] - x[..., :-2]) / 2.0
    gx[..., 0] = x[..., 1] - x[..., 0]
    gx[..., -1] = x[..., -1] - x[..., -2]
    return gy, gx


def grad_hw_adjoint(dgy: np.ndarray, dgx: np.ndarray) -> np.ndarray:
    df = np.zeros_like(dgy)
    # y axis
    df[..., 0, :] -= dgy[..., 0, :]
    df[..., 1, :] += dgy[..., 0, :]
    df[..., -2, :] -= dgy[..., -1, :]
    df[..., -1, :] += dgy[..., -1, :]
    df[..., :-2, :] -= dgy[..., 1:-1, :] / 2.0
    df[..., 2:, :] += dgy[..., 1:-1, :] / 2.0
    # x axis
    df[..., 0] -= dgx[..., 0]
    df[..., 1] += dgx[..., 0]
    df[..., -2] -= dgx[..., -1]
    df[..., -1] += dgx[..., -1]
    df[..., :-2] -= dgx[..., 1:-1] / 2.0
    df[..., 2:] += dgx[..., 1:-1] / 2.0
    return df


def psi_apply(x: np.ndarray, center: LightCenter) -> np.ndarray:
    """Radial gradient of each channel about a fixed center (linear operator)."""
    h, w = x.shape[-2:]
    ux, uy, mask = _psi_direction(h, w, center)
    gy, gx = grad_hw(x)
    psi = gx * ux + gy * uy
    psi[..., mask] = 0.0
    return psi


def psi_adjoint(g: np.ndarray, center: LightCenter) -> np.ndarray:
    h, w = g.shape[-2:]
    ux, uy, mask = _psi_direction(h, w, center)
    g = np.where(mask, 0.0, g)
    return grad_hw_adjoint(g * uy, g * ux)


# --- losses ----------------------------------------------------------------------

def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def rms_backward(g: float, x: np.ndarray, value: float) -> np.ndarray:
    """d(g * rms(x))/dx; zero at the non-differentiable origin."""
    if value < _EPS_NORM:
        return np.zeros_like(x)
    return (g / (x.size * value)) * x


def luminance_nchw(x: np.ndarray) -> np.ndarray:
    """(n, 3, h, w) -> (n, h, w) Rec.601 luminance."""
    r, g, b = LUMA_WEIGHTS
    return r * x[:, 0] + g * x[:, 1] + b * x[:, 2]


def luminance_nchw_backward(dlum: np.ndarray) -> np.ndarray:
    n, h, w = dlum.shape
    out = np.empty((n, 3, h, w))
    for c, w_c in enumerate(LUMA_WEIGHTS):
        out[:, c] = w_c * dlum
    return out


def ssim_forward(x: np.ndarray, y: np.ndarray) -> Tuple[float, dict]:
    """Mean local SSIM of two 2-D arrays; same formula as metrics.ssim."""
    kernel = gaussian_window()
    mu_x = signal.correlate2d(x, kernel, mode="valid")
    mu_y = signal.correlate2d(y, kernel, mode="valid")
    ex2 = signal.correlate2d(x * x, kernel, mode="valid")
    exy = signal.correlate2d(x * y, kernel, mode="valid")
    ey2 = signal.correlate2d(y * y, kernel, mode="valid")
    var_x = ex2 - mu_x * mu_x
    var_y = ey2 - mu_y * mu_y
    cov = exy - mu_x * mu_y
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    a1 = 2 * mu_x * mu_y + c1
    a2 = 2 * cov + c2
    b1 = mu_x * mu_x + mu_y * mu_y + c1
    b2 = var_x + var_y + c2
    s = (a1 * a2) / (b1 * b2)
    cache = dict(
        x=x, y=y, kernel=kernel, mu_x=mu_x, mu_y=mu_y, a1=a1, a2=a2, b1=b1, b2=b2
    )
    return float(np.mean(s)), cache


def ssim_backward(g: float, cache: dict) -> np.ndarray:
    """Gradient of g * ssim(x, y) with respect to x."""
    x, y, kernel = cache["x"], cache["y"], cache["kernel"]
    mu_x, mu_y = cache["mu_x"], cache["mu_y"]
    a1, a2, b1, b2 = cache["a1"], cache["a2"], cache["b1"], cache["b2"]
    ds = np.full(a1.shape, g / a1.size)
    inv_b = 1.0 / (b1 * b2)
    da1 = ds * a2 * inv_b
    da2 = ds * a1 * inv_b
    db1 = -ds * a1 * a2 * inv_b / b1
    db2 = -ds * a1 * a2 * inv_b / b2
    dmu_x = 2.0 * (da1 * mu_y + db1 * mu_x)
    dcov = 2.0 * da2
    dvar_x = db2
    # var_x = E[x^2] - mu_x^2, cov = E[xy] - mu_x mu_y
    dex2 = dvar_x
    dexy = dcov
    dmu_x += -2.0 * mu_x * dvar_x - mu_y * dcov

    def adj(arr: np.ndarray) -> np.ndarray:
        return signal.convolve2d(arr, kernel, mode="full")

    dx = adj(dmu_x)
    dx += 2.0 * x * adj(dex2)
    dx += y * adj(dexy)
    return dx
