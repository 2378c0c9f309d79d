from .checkpoint import (
    CheckpointFormatError,
    atomic_write_bytes,
    atomic_write_text,
    decode_params,
    encode_params,
    load_params,
    save_params,
)
from .nn import (
    GruSpec,
    MlpSpec,
    gru_forward,
    init_gru,
    init_mlp,
    mlp_forward,
    orthogonal_init,
    uniform_init,
)
from .optim import AdamState, adam_step
from .tensor import ShapeError, Tape, Tensor, backward, ops, softmax

__all__ = [
    "AdamState",
    "CheckpointFormatError",
    "GruSpec",
    "MlpSpec",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "atomic_write_bytes",
    "atomic_write_text",
    "backward",
    "decode_params",
    "encode_params",
    "gru_forward",
    "init_gru",
    "init_mlp",
    "load_params",
    "mlp_forward",
    "ops",
    "orthogonal_init",
    "save_params",
    "softmax",
    "uniform_init",
]
