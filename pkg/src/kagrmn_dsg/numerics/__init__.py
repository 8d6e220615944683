from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .optim import Adam, AdamState, MissingGradientError, adam_step
from .params import Parameter, ParameterStore, init_array
from .tensor import *  # noqa: F401,F403
from .tensor import __all__ as _tensor_all

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "MissingGradientError",
    "Parameter",
    "ParameterStore",
    "adam_step",
    "init_array",
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
    *_tensor_all,
]
