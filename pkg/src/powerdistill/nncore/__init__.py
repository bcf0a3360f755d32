"""Reverse-mode autodiff core, student networks and the DPG critic."""

from .models import (
    ArchSpec,
    Batch,
    Gradient,
    Model,
    Normalizer,
    ParamSet,
    Record,
    as_batch,
    backward,
    build_model,
    critic_forward,
    gnn_forward,
    init_params,
    mlp_forward,
    sgd_step,
)

__all__ = [
    "ArchSpec", "Batch", "Gradient", "Model", "Normalizer", "ParamSet", "Record",
    "as_batch", "backward", "build_model", "critic_forward", "gnn_forward",
    "init_params", "mlp_forward", "sgd_step",
]
