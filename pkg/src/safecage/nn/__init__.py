"""Minimal differentiable-network substrate (float64, CPU)."""
from safecage.nn.checkpoint import CorruptCheckpointError, checkpoint_bytes, checkpoint_load, checkpoint_save
from safecage.nn.network import (
    Dense,
    Memory,
    Network,
    NetworkSpec,
    RecurrentState,
    StaleCacheError,
    actor_spec,
    critic_spec,
)
from safecage.nn.optim import clip_global_norm, hard_update, optimizer_step, soft_update
from safecage.nn.params import NonFiniteError, ParameterSet, ShapeError

__all__ = [
    "CorruptCheckpointError", "checkpoint_bytes", "checkpoint_load", "checkpoint_save",
    "Dense", "Memory", "Network", "NetworkSpec", "RecurrentState", "StaleCacheError",
    "actor_spec", "critic_spec", "clip_global_norm", "hard_update", "optimizer_step",
    "soft_update", "NonFiniteError", "ParameterSet", "ShapeError",
]
