"""Numeric substrate: tape autodiff, MLPs, Adam and checkpoints."""

from . import tape as ops
from .adam import AdamState, NonFiniteGradient, adam_step, adam_update, clip_grad_norm
from .checkpoint import load_checkpoint, save_checkpoint
from .mlp import ParamSet, ShapeError, init_mlp, mlp_forward
from .tape import Node, Tape, TapeError, stop_gradient

__all__ = [
    "AdamState",
    "Node",
    "NonFiniteGradient",
    "ParamSet",
    "ShapeError",
    "Tape",
    "TapeError",
    "adam_step",
    "adam_update",
    "clip_grad_norm",
    "init_mlp",
    "load_checkpoint",
    "mlp_forward",
    "ops",
    "save_checkpoint",
    "stop_gradient",
]
