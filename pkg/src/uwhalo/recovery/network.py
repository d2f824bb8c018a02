"""Toy multi-scale residual attention dense network.

Topology.  The input is downsampled to 1/4 and 1/2 scale; each scale runs an
independent branch and the result is upsampled and concatenated into the
input of the next finer branch ("fused before processing"):

    quarter:  x4                 -> branch -> r4
    half:     [x2, up(r4)]       -> branch -> r2
    full:     [x,  up(r2)]       -> branch -> r1
    output:   x + r1            (global residual; clamped only at the
                                 public boundary)

A branch is head conv (3x3) -> D residual dense blocks -> 1x1 global feature
fusion over the concatenated block outputs -> tail conv (3x3).  A block runs
G densely-connected 3x3 grow layers (ReLU), a 1x1 local fusion back to the
base width, channel attention (squeeze/excite 1x1 pair, reduction 2), and a
local residual.  All kernels are 3x3 except the fusion and attention kernels,
which are 1x1.

With every parameter at zero the tail contributes nothing and the network is
an exact identity.

Training loss (weights mu1, mu2, mu3):

    total = mu1 * RMS(pred - ref)            reconstruction
          - mu2 * SSIM(pred, ref)            structural similarity
          + mu3 * RMS(psi(pred) - psi(ref))  radial-gradient consistency

with SSIM on luminance and psi per channel about the given light center.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import FormatError, NonFiniteError, ParamError, ShapeError
from ..imgcore import ImageF
from ..metrics import ssim as metrics_ssim
from ..radial import LightCenter, psi_array
from . import ops

CHECKPOINT_MAGIC = b"RADN"
CHECKPOINT_VERSION = 1

DEFAULT_MU = (1.0, 0.5, 0.2)

# Input channels per scale branch: the quarter-scale branch sees the raw
# pyramid level, finer branches see it concatenated with the upsampled
# coarser result.
_SCALES: Tuple[Tuple[str, int], ...] = (("s4", 3), ("s2", 6), ("s1", 6))


@dataclass(frozen=True)
class RadnParams:
    """All network weights plus the loss trade-off weights."""

    depth: int = 3
    growth: int = 3
    base_channels: int = 8
    mu: Tuple[float, float, float] = DEFAULT_MU
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def with_tensors(self, tensors: Dict[str, np.ndarray]) -> "RadnParams":
        return replace(self, tensors=tensors)


def param_spec(depth: int, growth: int, c0: int) -> List[Tuple[str, Tuple[int, ...]]]:
    """Parameter names and shapes in declaration (checkpoint) order."""
    if depth < 1 or growth < 1:
        raise ParamError("depth and growth must be >= 1")
    if c0 < 2 or c0 % 2:
        raise ParamError("base channel count must be even and >= 2")
    spec: List[Tuple[str, Tuple[int, ...]]] = []
    for scale, cin in _SCALES:
        spec.append((f"{scale}.head.w", (c0, cin, 3, 3)))
        spec.append((f"{scale}.head.b", (c0,)))
        for d in range(1, depth + 1):
            for g in range(1, growth + 1):
                spec.append((f"{scale}.rdb{d}.grow{g}.w", (c0, g * c0, 3, 3)))
                spec.append((f"{scale}.rdb{d}.grow{g}.b", (c0,)))
            spec.append((f"{scale}.rdb{d}.fuse.w", (c0, (growth + 1) * c0, 1, 1)))
            spec.append((f"{scale}.rdb{d}.fuse.b", (c0,)))
            spec.append((f"{scale}.rdb{d}.att.squeeze.w", (c0 // 2, c0, 1, 1)))
            spec.append((f"{scale}.rdb{d}.att.squeeze.b", (c0 // 2,)))
            spec.append((f"{scale}.rdb{d}.att.excite.w", (c0, c0 // 2, 1, 1)))
            spec.append((f"{scale}.rdb{d}.att.excite.b", (c0,)))
        spec.append((f"{scale}.gff.w", (c0, depth * c0, 1, 1)))
        spec.append((f"{scale}.gff.b", (c0,)))
        spec.append((f"{scale}.tail.w", (3, c0, 3, 3)))
        spec.append((f"{scale}.tail.b", (3,)))
    return spec


def init_params(
    depth: int = 3,
    growth: int = 3,
    base_channels: int = 8,
    mu: Tuple[float, float, float] = DEFAULT_MU,
    seed: Optional[int] = None,
    zero: bool = False,
) -> RadnParams:
    """He-initialized weights (tail convs scaled by 0.1 for a near-identity
    start); ``zero=True`` gives the all-zero exact-identity configuration."""
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in param_spec(depth, growth, base_channels):
        if zero or name.endswith(".b"):
            tensors[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:]))
        std = np.sqrt(2.0 / fan_in)
        if ".tail." in name:
            std *= 0.1
        tensors[name] = rng.normal(0.0, std, size=shape)
    return RadnParams(depth, growth, base_channels, mu, tensors)


def parameter_count(params: RadnParams) -> int:
    return sum(t.size for t in params.tensors.values())


def zero_grads(params: RadnParams) -> Dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.tensors.items()}


# --- forward / backward ----------------------------------------------------------

def _attention_forward(t: Dict[str, np.ndarray], pfx: str, x: np.ndarray):
    pooled = ops.global_avg_pool(x)
    z1 = ops.conv2d(pooled, t[f"{pfx}.squeeze.w"], t[f"{pfx}.squeeze.b"])
    a1 = ops.relu(z1)
    z2 = ops.conv2d(a1, t[f"{pfx}.excite.w"], t[f"{pfx}.excite.b"])
    s = ops.sigmoid(z2)
    out = ops.scale_channels(x, s)
    return out, {"x": x, "pooled": pooled, "z1": z1, "a1": a1, "s": s}


def _attention_backward(t, pfx, g, cache, grads):
    x, s = cache["x"], cache["s"]
    dx, ds = ops.scale_channels_backward(g, x, s)
    dz2 = ops.sigmoid_backward(ds, s)
    da1, dw, db = ops.conv2d_backward(dz2, cache["a1"], t[f"{pfx}.excite.w"])
    grads[f"{pfx}.excite.w"] += dw
    grads[f"{pfx}.excite.b"] += db
    dz1 = ops.relu_backward(da1, cache["z1"])
    dpooled, dw, db = ops.conv2d_backward(dz1, cache["pooled"], t[f"{pfx}.squeeze.w"])
    grads[f"{pfx}.squeeze.w"] += dw
    grads[f"{pfx}.squeeze.b"] += db
    dx += ops.global_avg_pool_backward(dpooled, x.shape)
    return dx


def _rdb_forward(t, pfx, feat, growth):
    acts = [feat]
    zs = []
    for g in range(1, growth + 1):
        inp = ops.concat_channels(acts)
        z = ops.conv2d(inp, t[f"{pfx}.grow{g}.w"], t[f"{pfx}.grow{g}.b"])
        zs.append(z)
        acts.append(ops.relu(z))
    cat = ops.concat_channels(acts)
    fused = ops.conv2d(cat, t[f"{pfx}.fuse.w"], t[f"{pfx}.fuse.b"])
    att, att_cache = _attention_forward(t, f"{pfx}.att", fused)
    out = feat + att
    return out, {"acts": acts, "zs": zs, "cat": cat, "att": att_cache}


def _rdb_backward(t, pfx, g, cache, grads, growth):
    acts, zs = cache["acts"], cache["zs"]
    dfused = _attention_backward(t, f"{pfx}.att", g, cache["att"], grads)
    dcat, dw, db = ops.conv2d_backward(dfused, cache["cat"], t[f"{pfx}.fuse.w"])
    grads[f"{pfx}.fuse.w"] += dw
    grads[f"{pfx}.fuse.b"] += db
    sizes = [a.shape[1] for a in acts]
    dacts = ops.concat_channels_backward(dcat, sizes)
    dacts = [d.copy() for d in dacts]
    for g_idx in range(growth, 0, -1):
        dz = ops.relu_backward(dacts[g_idx], zs[g_idx - 1])
        inp = ops.concat_channels(acts[:g_idx])
        dinp, dw, db = ops.conv2d_backward(dz, inp, t[f"{pfx}.grow{g_idx}.w"])
        grads[f"{pfx}.grow{g_idx}.w"] += dw
        grads[f"{pfx}.grow{g_idx}.b"] += db
        for j, part in enumerate(ops.concat_channels_backward(dinp, sizes[:g_idx])):
            dacts[j] += part
    return g + dacts[0]  # local residual


def _branch_forward(params: RadnParams, scale: str, x: np.ndarray):
    t = params.tensors
    f0 = ops.conv2d(x, t[f"{scale}.head.w"], t[f"{scale}.head.b"])
    feat = f0
    rdb_outs = []
    rdb_caches = []
    for d in range(1, params.depth + 1):
        feat, cache = _rdb_forward(t, f"{scale}.rdb{d}", feat, params.growth)
        rdb_outs.append(feat)
        rdb_caches.append(cache)
    cat = ops.concat_channels(rdb_outs)
    gff = ops.conv2d(cat, t[f"{scale}.gff.w"], t[f"{scale}.gff.b"])
    out = ops.conv2d(gff, t[f"{scale}.tail.w"], t[f"{scale}.tail.b"])
    cache = {"x": x, "f0": f0, "rdb_outs": rdb_outs, "rdb_caches": rdb_caches,
             "cat": cat, "gff": gff}
    return out, cache


def _branch_backward(params: RadnParams, scale: str, g, cache, grads):
    t = params.tensors
    dgff, dw, db = ops.conv2d_backward(g, cache["gff"], t[f"{scale}.tail.w"])
    grads[f"{scale}.tail.w"] += dw
    grads[f"{scale}.tail.b"] += db
    dcat, dw, db = ops.conv2d_backward(dgff, cache["cat"], t[f"{scale}.gff.w"])
    grads[f"{scale}.gff.w"] += dw
    grads[f"{scale}.gff.b"] += db
    sizes = [o.shape[1] for o in cache["rdb_outs"]]
    dparts = ops.concat_channels_backward(dcat, sizes)
    carry = dparts[-1].copy()
    for d in range(params.depth, 0, -1):
        carry = _rdb_backward(
            t, f"{scale}.rdb{d}", carry, cache["rdb_caches"][d - 1], grads, params.growth
        )
        if d > 1:
            carry = carry + dparts[d - 2]
    dx, dw, db = ops.conv2d_backward(carry, cache["x"], t[f"{scale}.head.w"])
    grads[f"{scale}.head.w"] += dw
    grads[f"{scale}.head.b"] += db
    return dx


def forward_tensor(params: RadnParams, x: np.ndarray) -> Tuple[np.ndarray, dict]:
    """Unclamped network output for a batch (n, 3, h, w), plus backward caches."""
    n, c, h, w = x.shape
    if c != 3:
        raise ShapeError("the recovery network expects 3-channel input")
    if h < 16 or w < 16:
        raise ShapeError("input must be at least 16x16")
    h2, w2 = max(2, h // 2), max(2, w // 2)
    h4, w4 = max(2, h // 4), max(2, w // 4)
    x2 = ops.resize(x, h2, w2)
    x4 = ops.resize(x, h4, w4)
    r4, c4 = _branch_forward(params, "s4", x4)
    u4 = ops.resize(r4, h2, w2)
    in2 = ops.concat_channels([x2, u4])
    r2, c2 = _branch_forward(params, "s2", in2)
    u2 = ops.resize(r2, h, w)
    in1 = ops.concat_channels([x, u2])
    r1, c1 = _branch_forward(params, "s1", in1)
    y = x + r1
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("non-finite values in network output")
    cache = {"x": x, "c4": c4, "c2": c2, "c1": c1,
             "sizes": (h, w, h2, w2, h4, w4), "r4": r4, "r2": r2}
    return y, cache


def backward_tensor(params: RadnParams, dy: np.ndarray, cache: dict) -> Dict[str, np.ndarray]:
    """Parameter gradients for the unclamped forward pass (input grad dropped)."""
    grads = zero_grads(params)
    h, w, h2, w2, h4, w4 = cache["sizes"]
    din1 = _branch_backward(params, "s1", dy, cache["c1"], grads)
    _, du2 = ops.concat_channels_backward(din1, [3, 3])
    dr2 = ops.resize_backward(du2, h2, w2)
    din2 = _branch_backward(params, "s2", dr2, cache["c2"], grads)
    _, du4 = ops.concat_channels_backward(din2, [3, 3])
    dr4 = ops.resize_backward(du4, h4, w4)
    _branch_backward(params, "s4", dr4, cache["c4"], grads)
    return grads


# --- loss path --------------------------------------------------------------------

def _center_for_item(centers, i: int, h: int, w: int) -> LightCenter:
    c = centers[i] if centers[i] is not None else LightCenter((w - 1) / 2, (h - 1) / 2)
    return c.clamped(h, w)


def loss_forward_backward(
    y: np.ndarray,
    ref: np.ndarray,
    centers: Sequence[Optional[LightCenter]],
    mu: Tuple[float, float, float],
) -> Tuple[Tuple[float, float, float, float], np.ndarray]:
    """Summed three-term loss over a batch and its gradient w.r.t. y."""
    if y.shape != ref.shape:
        raise ShapeError(f"prediction {y.shape} vs reference {ref.shape}")
    mu1, mu2, mu3 = mu
    n, _, h, w = y.shape
    dy = np.zeros_like(y)
    l_re = l_pre = l_rg = 0.0
    for i in range(n):
        diff = y[i] - ref[i]
        value = ops.rms(diff)
        l_re += mu1 * value
        dy[i] += ops.rms_backward(mu1, diff, value)

        lum_y = ops.luminance_nchw(y[i : i + 1])
        lum_r = ops.luminance_nchw(ref[i : i + 1])
        s_val, s_cache = ops.ssim_forward(lum_y[0], lum_r[0])
        l_pre += -mu2 * s_val
        dlum = ops.ssim_backward(-mu2, s_cache)
        dy[i] += ops.luminance_nchw_backward(dlum[np.newaxis])[0]

        center = _center_for_item(centers, i, h, w)
        psi_y = ops.psi_apply(y[i], center)
        psi_r = ops.psi_apply(ref[i], center)
        e = psi_y - psi_r
        value = ops.rms(e)
        l_rg += mu3 * value
        dpsi = ops.rms_backward(mu3, e, value)
        dy[i] += ops.psi_adjoint(dpsi, center)
    total = l_re + l_pre + l_rg
    if not np.isfinite(total):
        raise NonFiniteError("non-finite training loss")
    return (total, l_re, l_pre, l_rg), dy


def batch_backward(
    params: RadnParams,
    x: np.ndarray,
    ref: np.ndarray,
    centers: Sequence[Optional[LightCenter]],
) -> Tuple[Tuple[float, float, float, float], Dict[str, np.ndarray]]:
    """Loss terms (summed over the batch) and parameter gradients."""
    y, cache = forward_tensor(params, x)
    terms, dy = loss_forward_backward(y, ref, centers, params.mu)
    grads = backward_tensor(params, dy, cache)
    return terms, grads


# --- public single-image operations -------------------------------------------------

def _image_to_tensor(img: ImageF) -> np.ndarray:
    if img.channels != 3:
        raise ShapeError("the recovery network expects 3-channel images")
    return img.data[np.newaxis]


def radn_forward(params: RadnParams, img: ImageF) -> ImageF:
    """Run the network on one image; output clamped to [0, 1]."""
    y, _ = forward_tensor(params, _image_to_tensor(img))
    return ImageF(np.clip(y[0], 0.0, 1.0))


def recovery_loss(
    pred: ImageF,
    ref: ImageF,
    center: LightCenter,
    mu: Tuple[float, float, float] = DEFAULT_MU,
) -> Tuple[float, float, float, float]:
    """(total, L_re, L_pre, L_rg) between a prediction and its reference."""
    if pred.data.shape != ref.data.shape:
        raise ShapeError(f"prediction {pred.data.shape} vs reference {ref.data.shape}")
    mu1, mu2, mu3 = mu
    l_re = mu1 * ops.rms(pred.data - ref.data)
    l_pre = -mu2 * metrics_ssim(pred, ref)
    c = center.clamped(pred.height, pred.width)
    e = np.stack([psi_array(pred.plane(i), c) - psi_array(ref.plane(i), c)
                  for i in range(pred.channels)])
    l_rg = mu3 * ops.rms(e)
    return l_re + l_pre + l_rg, l_re, l_pre, l_rg


def radn_backward(
    params: RadnParams,
    img: ImageF,
    ref: ImageF,
    center: LightCenter,
    mu: Optional[Tuple[float, float, float]] = None,
) -> Tuple[Tuple[float, float, float, float], Dict[str, np.ndarray]]:
    """Analytic gradients of the total loss for a single image."""
    p = params if mu is None else replace(params, mu=mu)
    return batch_backward(p, _image_to_tensor(img), _image_to_tensor(ref), [center])


# --- checkpoint I/O -----------------------------------------------------------------

def save_checkpoint(params: RadnParams, path: Union[str, Path]) -> None:
    """Little-endian binary: magic, version, (D, G, C0) as u32, then each
    tensor in declaration order as a u64 element count plus f32 data."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<IIII", CHECKPOINT_VERSION,
                                            params.depth, params.growth,
                                            params.base_channels)]
    for name, _ in param_spec(params.depth, params.growth, params.base_channels):
        t = params.tensors[name]
        chunks.append(struct.pack("<Q", t.size))
        chunks.append(t.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: Union[str, Path]) -> RadnParams:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a parameter checkpoint")
    version, depth, growth, c0 = struct.unpack_from("<IIII", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 4 + 16
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in param_spec(depth, growth, c0):
        (count,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        expected = int(np.prod(shape))
        if count != expected:
            raise FormatError(f"tensor {name}: expected {expected} values, got {count}")
        flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        tensors[name] = flat.astype(np.float64).reshape(shape)
    if offset != len(blob):
        raise FormatError("trailing bytes in checkpoint")
    return RadnParams(depth, growth, c0, DEFAULT_MU, tensors)
