"""Differentiable substrate: layers, parameter groups, optimizer, schedule, checkpoints."""

from .checkpoint import read_tensor_map, write_tensor_map
from .layers import (
    AdaptableLinear,
    AttentionBlock,
    Conv1d,
    LayerConfig,
    causal_mask,
    conv1d,
    conv_output_length,
    sinusoidal_positions,
)
from .optim import AdamHyper, OptimizerState, adam_step, backward, clip_global_norm, global_norm, lr_at
from .params import ParamGroup, canonical_name, group_of, param_groups, set_trainable_groups

__all__ = [
    "AdamHyper",
    "AdaptableLinear",
    "AttentionBlock",
    "Conv1d",
    "LayerConfig",
    "OptimizerState",
    "ParamGroup",
    "adam_step",
    "backward",
    "canonical_name",
    "causal_mask",
    "clip_global_norm",
    "conv1d",
    "conv_output_length",
    "global_norm",
    "group_of",
    "lr_at",
    "param_groups",
    "read_tensor_map",
    "set_trainable_groups",
    "sinusoidal_positions",
    "write_tensor_map",
]
