"""Central-difference verification of every differentiable primitive.

Each check perturbs inputs (and parameters) elementwise with h = 1e-4 and
compares against the analytic backward pass using the relative error
|analytic - numeric| / (|analytic| + 1e-8).  ``run_all`` covers each
primitive exactly once plus the end-to-end toy network.
"""

from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from ..radial import LightCenter
from . import ops
from .network import RadnParams, batch_backward, forward_tensor, loss_forward_backward

FD_STEP = 1e-4
REL_TOL = 1e-4

PRIMITIVE_OPS = (
    "conv3x3",
    "conv1x1",
    "relu",
    "sigmoid",
    "global_avg_pool",
    "channel_attention",
    "bilinear_resize",
    "concat_channels",
    "rms_loss",
    "ssim_loss",
    "radial_gradient_loss",
    "radn_end_to_end",
)


def _max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))


def _fd_grad(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Elementwise central differences of a scalar function."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + FD_STEP
        hi = f(x)
        flat[i] = orig - FD_STEP
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * FD_STEP)
    return g


def _check_conv(rng, k: int) -> float:
    x = rng.normal(0.5, 0.4, size=(2, 3, 6, 7))
    wt = rng.normal(0.0, 0.5, size=(4, 3, k, k))
    b = rng.normal(0.0, 0.1, size=4)
    proj = rng.normal(size=(2, 4, 6, 7))

    def loss_x(xv):
        return float(np.sum(proj * ops.conv2d(xv, wt, b)))

    gy = proj.copy()
    dx, dw, db = ops.conv2d_backward(gy, x, wt)
    errs = [
        _max_rel_err(dx, _fd_grad(loss_x, x)),
        _max_rel_err(dw, _fd_grad(lambda wv: float(np.sum(proj * ops.conv2d(x, wv, b))), wt)),
        _max_rel_err(db, _fd_grad(lambda bv: float(np.sum(proj * ops.conv2d(x, wt, bv))), b)),
    ]
    return max(errs)


def _check_relu(rng) -> float:
    x = rng.normal(0.0, 1.0, size=(2, 3, 5, 5))
    x[np.abs(x) < 0.05] += 0.2  # keep clear of the kink for finite differences
    proj = rng.normal(size=x.shape)
    analytic = ops.relu_backward(proj, x)
    numeric = _fd_grad(lambda xv: float(np.sum(proj * ops.relu(xv))), x)
    return _max_rel_err(analytic, numeric)


def _check_sigmoid(rng) -> float:
    x = rng.normal(0.0, 1.5, size=(2, 3, 4, 4))
    proj = rng.normal(size=x.shape)
    s = ops.sigmoid(x)
    analytic = ops.sigmoid_backward(proj, s)
    numeric = _fd_grad(lambda xv: float(np.sum(proj * ops.sigmoid(xv))), x)
    return _max_rel_err(analytic, numeric)


def _check_gap(rng) -> float:
    x = rng.normal(size=(2, 4, 5, 6))
    proj = rng.normal(size=(2, 4, 1, 1))
    analytic = ops.global_avg_pool_backward(proj, x.shape)
    numeric = _fd_grad(lambda xv: float(np.sum(proj * ops.global_avg_pool(xv))), x)
    return _max_rel_err(analytic, numeric)


def _check_attention(rng) -> float:
    from .network import _attention_backward, _attention_forward

    c0 = 4
    tensors = {
        "att.squeeze.w": rng.normal(0.0, 0.5, size=(c0 // 2, c0, 1, 1)),
        "att.squeeze.b": rng.normal(0.0, 0.1, size=c0 // 2),
        "att.excite.w": rng.normal(0.0, 0.5, size=(c0, c0 // 2, 1, 1)),
        "att.excite.b": rng.normal(0.0, 0.1, size=c0),
    }
    x = rng.normal(0.5, 0.5, size=(2, c0, 5, 5))
    proj = rng.normal(size=x.shape)

    def loss_of(xv, tv):
        out, _ = _attention_forward(tv, "att", xv)
        return float(np.sum(proj * out))

    out, cache = _attention_forward(tensors, "att", x)
    grads = {k: np.zeros_like(v) for k, v in tensors.items()}
    dx = _attention_backward(tensors, "att", proj.copy(), cache, grads)
    errs = [_max_rel_err(dx, _fd_grad(lambda xv: loss_of(xv, tensors), x))]
    for name in tensors:
        numeric = _fd_grad(lambda tv, n=name: loss_of(x, {**tensors, n: tv}), tensors[name])
        errs.append(_max_rel_err(grads[name], numeric))
    return max(errs)


def _check_resize(rng) -> float:
    x = rng.normal(size=(2, 3, 6, 8))
    proj = rng.normal(size=(2, 3, 11, 5))
    analytic = ops.resize_backward(proj, 6, 8)
    numeric = _fd_grad(lambda xv: float(np.sum(proj * ops.resize(xv, 11, 5))), x)
    return _max_rel_err(analytic, numeric)


def _check_concat(rng) -> float:
    a = rng.normal(size=(2, 2, 4, 4))
    b = rng.normal(size=(2, 3, 4, 4))
    proj = rng.normal(size=(2, 5, 4, 4))
    da, db = ops.concat_channels_backward(proj, [2, 3])
    na = _fd_grad(lambda av: float(np.sum(proj * ops.concat_channels([av, b]))), a)
    nb = _fd_grad(lambda bv: float(np.sum(proj * ops.concat_channels([a, bv]))), b)
    return max(_max_rel_err(da, na), _max_rel_err(db, nb))


def _check_rms(rng) -> float:
    x = rng.normal(0.3, 0.5, size=(3, 7, 7))
    value = ops.rms(x)
    analytic = ops.rms_backward(1.0, x, value)
    numeric = _fd_grad(lambda xv: ops.rms(xv), x)
    return _max_rel_err(analytic, numeric)


def _check_ssim(rng) -> float:
    x = np.clip(rng.normal(0.5, 0.2, size=(16, 16)), 0.05, 0.95)
    y = np.clip(x + rng.normal(0.0, 0.1, size=x.shape), 0.05, 0.95)
    _, cache = ops.ssim_forward(x, y)
    analytic = ops.ssim_backward(1.0, cache)
    numeric = _fd_grad(lambda xv: ops.ssim_forward(xv, y)[0], x)
    return _max_rel_err(analytic, numeric)


def _check_psi(rng) -> float:
    center = LightCenter(4.3, 6.1)
    x = rng.normal(0.5, 0.3, size=(2, 10, 9))
    ref = rng.normal(0.5, 0.3, size=x.shape)
    psi_ref = ops.psi_apply(ref, center)

    def loss(xv):
        e = ops.psi_apply(xv, center) - psi_ref
        return ops.rms(e)

    e = ops.psi_apply(x, center) - psi_ref
    value = ops.rms(e)
    analytic = ops.psi_adjoint(ops.rms_backward(1.0, e, value), center)
    numeric = _fd_grad(loss, x)
    return _max_rel_err(analytic, numeric)


# The end-to-end check runs on a pinned instance (weights bounded away from
# zero, ReLU pre-activations cleared of the finite-difference step).  A freely
# seeded instance regularly contains parameters whose true gradient is ~1e-9;
# at h = 1e-4 the central difference cannot resolve those below the 1e-12
# absolute accuracy the relative-error formula then demands.
E2E_PARAM_SEED = 1012
E2E_DATA_SEED = 2012


def _bounded_check_params(seed: int) -> RadnParams:
    """D=1, G=1, C0=4 weights with magnitudes bounded away from zero."""
    from .network import param_spec

    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_spec(1, 1, 4):
        fan_in = int(np.prod(shape[1:]))
        if name.endswith(".b"):
            tensors[name] = rng.uniform(-0.1, 0.1, size=shape)
        else:
            mag = rng.uniform(0.25, 0.75, size=shape) * np.sqrt(2.0 / fan_in)
            tensors[name] = mag * rng.choice([-1.0, 1.0], size=shape)
    return RadnParams(depth=1, growth=1, base_channels=4, tensors=tensors)


def _relu_preactivations(cache: dict):
    """Every ReLU input produced by a forward pass, with its bias name."""
    out = []
    for scale, key in (("s4", "c4"), ("s2", "c2"), ("s1", "c1")):
        branch = cache[key]
        for d, rdb in enumerate(branch["rdb_caches"], start=1):
            for g, z in enumerate(rdb["zs"], start=1):
                out.append((f"{scale}.rdb{d}.grow{g}.b", z))
            out.append((f"{scale}.rdb{d}.att.squeeze.b", rdb["att"]["z1"]))
    return out


def _clear_relu_kinks(params: RadnParams, x: np.ndarray, margin: float) -> RadnParams:
    """Nudge biases until no ReLU pre-activation sits within ``margin`` of 0.

    Central differences straddle the ReLU kink, so pre-activations inside the
    finite-difference step would corrupt the numeric gradient even though the
    analytic one is exact.
    """
    for _ in range(20):
        _, cache = forward_tensor(params, x)
        dirty = False
        tensors = dict(params.tensors)
        for bias_name, z in _relu_preactivations(cache):
            near = np.abs(z) < margin
            if near.any():
                channels = np.unique(np.nonzero(near)[1])
                b = tensors[bias_name].copy()
                b[channels] += 3.0 * margin
                tensors[bias_name] = b
                dirty = True
        if not dirty:
            return params
        params = params.with_tensors(tensors)
    raise RuntimeError("could not clear ReLU kinks for the gradient check")


def _check_end_to_end() -> float:
    """All parameters of a depth-1, growth-1, 4-channel net on 16x16 input."""
    rng = np.random.default_rng(E2E_DATA_SEED)
    params = _bounded_check_params(E2E_PARAM_SEED)
    x = np.clip(rng.normal(0.5, 0.2, size=(1, 3, 16, 16)), 0.05, 0.95)
    ref = np.clip(x + rng.normal(0.0, 0.15, size=x.shape), 0.05, 0.95)
    center = LightCenter(7.2, 8.6)
    params = _clear_relu_kinks(params, x, margin=10.0 * FD_STEP)

    def total_loss(p: RadnParams) -> float:
        y, _ = forward_tensor(p, x)
        terms, _ = loss_forward_backward(y, ref, [center], p.mu)
        return terms[0]

    _, grads = batch_backward(params, x, ref, [center])
    worst = 0.0
    for name, tensor in params.tensors.items():
        t = tensor.copy()
        numeric = np.zeros_like(t)
        flat = t.ravel()
        nf = numeric.ravel()
        perturbed = params.with_tensors({**params.tensors, name: t})
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            hi = total_loss(perturbed)
            flat[i] = orig - FD_STEP
            lo = total_loss(perturbed)
            flat[i] = orig
            nf[i] = (hi - lo) / (2.0 * FD_STEP)
        worst = max(worst, _max_rel_err(grads[name], numeric))
    return worst


def run_all(seed: int = 0, corrupt: bool = False) -> List[Tuple[str, float]]:
    """Max relative error per primitive, in PRIMITIVE_OPS order.

    The seed drives the primitive checks; the end-to-end network check runs
    on its pinned instance (see E2E_PARAM_SEED).  ``corrupt`` deliberately
    biases one analytic gradient (negative-control hook for the exit-code
    contract).
    """
    rng = np.random.default_rng(seed)
    results = [
        ("conv3x3", _check_conv(rng, 3)),
        ("conv1x1", _check_conv(rng, 1)),
        ("relu", _check_relu(rng)),
        ("sigmoid", _check_sigmoid(rng)),
        ("global_avg_pool", _check_gap(rng)),
        ("channel_attention", _check_attention(rng)),
        ("bilinear_resize", _check_resize(rng)),
        ("concat_channels", _check_concat(rng)),
        ("rms_loss", _check_rms(rng)),
        ("ssim_loss", _check_ssim(rng)),
        ("radial_gradient_loss", _check_psi(rng)),
        ("radn_end_to_end", _check_end_to_end()),
    ]
    if corrupt:
        results[0] = ("conv3x3", results[0][1] + 1.0)
    return results


def all_passed(results: List[Tuple[str, float]], tol: float = REL_TOL) -> bool:
    return all(err <= tol for _, err in results)
