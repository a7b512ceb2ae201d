from .checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .params import OptState, ParamSet, clip_by_global_norm, rmsprop_apply
from .tape import ShapeError, Tape, TapeNode, Tensor, backward, backward_all, constant
from . import ops

__all__ = [
    "CheckpointError", "OptState", "ParamSet", "ShapeError", "Tape", "TapeNode", "Tensor",
    "backward", "backward_all", "clip_by_global_norm", "constant", "decode_checkpoint",
    "encode_checkpoint", "load_checkpoint", "ops", "rmsprop_apply", "save_checkpoint",
]
