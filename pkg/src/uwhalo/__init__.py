"""uwhalo: artificial-light halo synthesis, separation and removal for
underwater images, plus a toy multi-scale recovery network and the usual
quality metric suite."""

from .imgcore import (
    ImageF,
    PixelCoord,
    elementwise_mul,
    load_image,
    resize_bilinear,
    save_image,
    to_luminance,
)
from .radial import (
    HaloLayer,
    HaloParams,
    LightCenter,
    RadialField,
    apply_halo,
    estimate_center,
    radial_gradient,
    synth_halo,
)
from .separation import (
    IrlsState,
    RadialProfile,
    SeparationConfig,
    blind_separate,
    remove_halo,
    smooth_loss,
    supervised_halo_loss,
    update_weights,
)

__version__ = "0.1.0"

__all__ = [
    "ImageF",
    "PixelCoord",
    "elementwise_mul",
    "load_image",
    "resize_bilinear",
    "save_image",
    "to_luminance",
    "HaloLayer",
    "HaloParams",
    "LightCenter",
    "RadialField",
    "apply_halo",
    "estimate_center",
    "radial_gradient",
    "synth_halo",
    "IrlsState",
    "RadialProfile",
    "SeparationConfig",
    "blind_separate",
    "remove_halo",
    "smooth_loss",
    "supervised_halo_loss",
    "update_weights",
    "__version__",
]
