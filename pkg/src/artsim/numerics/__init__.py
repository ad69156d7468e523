from .adam import AdamState, NonFiniteGradient, adam_step
from .autodiff import Tape, Tensor
from .checkpoint import CheckpointError, dumps_params, load_params, loads_params, save_params

__all__ = [
    "AdamState",
    "CheckpointError",
    "NonFiniteGradient",
    "Tape",
    "Tensor",
    "adam_step",
    "dumps_params",
    "load_params",
    "loads_params",
    "save_params",
]
