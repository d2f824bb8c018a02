"""Multi-scale residual attention dense network: model, trainer, grad checks."""

from .network import (
    DEFAULT_MU,
    RadnParams,
    init_params,
    load_checkpoint,
    param_spec,
    parameter_count,
    radn_backward,
    radn_forward,
    recovery_loss,
    save_checkpoint,
)
from .train import LossCurve, TrainConfig, loss_curve_csv, train_toy

__all__ = [
    "DEFAULT_MU",
    "RadnParams",
    "init_params",
    "load_checkpoint",
    "param_spec",
    "parameter_count",
    "radn_backward",
    "radn_forward",
    "recovery_loss",
    "save_checkpoint",
    "LossCurve",
    "TrainConfig",
    "loss_curve_csv",
    "train_toy",
]
