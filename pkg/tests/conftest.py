"""Shared fixtures: seeded pseudo-natural reference images and halo draws."""

import numpy as np
import pytest

from uwhalo.imgcore import ImageF, resize_bilinear
from uwhalo.radial import HaloParams, LightCenter


def make_reference(seed: int, size: int = 128, global_amp: float = 0.06,
                   fine_amp: float = 0.03) -> ImageF:
    """Low-contrast synthetic scene: smooth global shading plus fine texture.

    The global component is a bilinear 2x2-lattice surface (illumination-like
    trend); the fine component is a 33x33-lattice field (~4 px features).
    """
    rng = np.random.default_rng(seed)
    chans = []
    base = rng.uniform(0.45, 0.6)
    for _ in range(3):
        glob = resize_bilinear(ImageF(rng.normal(0, 1, (2, 2))[None]), size, size).plane(0)
        fine = resize_bilinear(ImageF(rng.normal(0, 1, (33, 33))[None]), size, size).plane(0)
        chans.append(base + rng.uniform(-0.08, 0.08) + global_amp * glob + fine_amp * fine)
    return ImageF(np.clip(np.stack(chans), 0.05, 0.95))


def make_flat_reference(seed: int, size: int = 128) -> ImageF:
    """Uniformly lit scene (fine texture only); for pipeline no-op checks."""
    return make_reference(seed, size, global_amp=0.0, fine_amp=0.03)


def draw_acceptance_halo(rng: np.random.Generator, height: int, width: int):
    """Beam-like halo draw used by the acceptance suite (sharper than cmd_synth)."""
    model = "gaussian" if rng.integers(0, 2) == 0 else "cosine4"
    x0 = rng.uniform(0.2 * width, 0.8 * width)
    y0 = rng.uniform(0.2 * height, 0.8 * height)
    sigma = rng.uniform(0.12, 0.32) * min(height, width)
    ambient = rng.uniform(0.1, 0.5)
    return HaloParams(model, sigma, ambient, 1.0), LightCenter(x0, y0)


@pytest.fixture(scope="session")
def reference_images():
    return [make_reference(100 + i) for i in range(5)]
