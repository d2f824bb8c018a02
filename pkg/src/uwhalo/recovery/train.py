"""Adam training loop over random patch crops, at desk scale.

Deterministic given the config seed: crop sampling, parameter updates and
the recorded loss curve are all reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, DataError
from ..imgcore import ImageF
from ..radial import LightCenter
from .network import RadnParams, batch_backward

# (step, total, l_re, l_pre, l_rg) per optimizer step, batch means.
LossCurve = List[Tuple[int, float, float, float, float]]

TrainPair = Tuple[ImageF, ImageF, Optional[LightCenter]]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    patch_size: int = 48
    batch_size: int = 2
    steps: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.patch_size < 16:
            raise ConfigError("patch_size must be >= 16")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")


def _normalize_pair(entry) -> TrainPair:
    if len(entry) == 2:
        return entry[0], entry[1], None
    return entry


def _sample_crop(rng, pair: TrainPair, patch: int):
    inp, ref, center = pair
    h, w = inp.height, inp.width
    oy = int(rng.integers(0, h - patch + 1))
    ox = int(rng.integers(0, w - patch + 1))
    x = inp.data[:, oy : oy + patch, ox : ox + patch]
    y = ref.data[:, oy : oy + patch, ox : ox + patch]
    crop_center = None
    if center is not None:
        crop_center = LightCenter(center.x0 - ox, center.y0 - oy).clamped(patch, patch)
    return x, y, crop_center


def train_toy(
    params: RadnParams, dataset: Sequence, cfg: TrainConfig
) -> Tuple[RadnParams, LossCurve]:
    """Adam over random patch crops; returns updated params and the loss curve.

    Dataset entries are (input, reference) or (input, reference, center)
    tuples; a missing center falls back to the geometric crop center for the
    radial-gradient loss term.
    """
    cfg.validate()
    if len(dataset) < 4:
        raise DataError(f"need at least 4 training pairs, got {len(dataset)}")
    pairs = [_normalize_pair(e) for e in dataset]
    for inp, ref, _ in pairs:
        if inp.data.shape != ref.data.shape:
            raise DataError("input/reference shape mismatch in dataset")
        if inp.channels != 3:
            raise DataError("training pairs must be 3-channel")
        if inp.height < cfg.patch_size or inp.width < cfg.patch_size:
            raise DataError(f"images smaller than patch size {cfg.patch_size}")

    rng = np.random.default_rng(cfg.seed)
    tensors = dict(params.tensors)
    m: Dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in tensors.items()}
    v: Dict[str, np.ndarray] = {k: np.zeros_like(val) for k, val in tensors.items()}
    curve: LossCurve = []
    nb = cfg.batch_size

    for step in range(cfg.steps):
        xs, ys, centers = [], [], []
        for _ in range(nb):
            j = int(rng.integers(0, len(pairs)))
            x, y, c = _sample_crop(rng, pairs[j], cfg.patch_size)
            xs.append(x)
            ys.append(y)
            centers.append(c)
        batch_x = np.stack(xs)
        batch_y = np.stack(ys)
        terms, grads = batch_backward(params.with_tensors(tensors), batch_x, batch_y, centers)

        t = step + 1
        bc1 = 1.0 - cfg.beta1**t
        bc2 = 1.0 - cfg.beta2**t
        new_tensors: Dict[str, np.ndarray] = {}
        for name, p in tensors.items():
            g = grads[name] / nb
            m[name] = cfg.beta1 * m[name] + (1.0 - cfg.beta1) * g
            v[name] = cfg.beta2 * v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = m[name] / bc1
            v_hat = v[name] / bc2
            new_tensors[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        tensors = new_tensors
        curve.append((step, terms[0] / nb, terms[1] / nb, terms[2] / nb, terms[3] / nb))

    return params.with_tensors(tensors), curve


def loss_curve_csv(curve: LossCurve) -> str:
    lines = ["step,total,l_re,l_pre,l_rg"]
    for step, total, l_re, l_pre, l_rg in curve:
        lines.append(f"{step},{total:.17g},{l_re:.17g},{l_pre:.17g},{l_rg:.17g}")
    return "\n".join(lines) + "\n"
