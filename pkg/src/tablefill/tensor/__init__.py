"""Minimal reverse-mode autodiff over numpy float64 arrays."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .engine import *  # noqa: F401,F403
from .engine import __all__ as _engine_all
from .gradcheck import GradCheckError, finite_diff_check
from .nn import glorot, init_attention, lstm, multi_head_attention, ones, zeros
from .optim import Adam, AdamState, adam_step

__all__ = list(_engine_all) + [
    "CheckpointError", "load_checkpoint", "save_checkpoint", "GradCheckError", "finite_diff_check",
    "glorot", "init_attention", "lstm", "multi_head_attention", "ones", "zeros",
    "Adam", "AdamState", "adam_step",
]
