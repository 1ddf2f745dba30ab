"""Function approximators: autodiff engine, sequence models, persistence."""

from . import tensor
from .tensor import Tensor, no_grad
from .modules import (
    GruGate,
    LayerNorm,
    Linear,
    LstmCell,
    Module,
    RelativeMultiHeadAttention,
    TransformerBlock,
    orthogonal,
)
from .models import (
    BACKBONE_KINDS,
    FcnBackbone,
    GaussianPolicyHead,
    LstmBackbone,
    ModelConfig,
    TransformerBackbone,
    ValueHead,
    clone_memory,
    make_backbone,
)
from .checkpoint import (
    load_checkpoint,
    save_checkpoint,
    rng_state_to_array,
    array_to_rng_state,
)
from .optim import Adam, clip_grad_norm, global_grad_norm

__all__ = [
    "tensor",
    "Tensor",
    "no_grad",
    "Module",
    "Linear",
    "LayerNorm",
    "GruGate",
    "LstmCell",
    "RelativeMultiHeadAttention",
    "TransformerBlock",
    "orthogonal",
    "ModelConfig",
    "BACKBONE_KINDS",
    "make_backbone",
    "clone_memory",
    "FcnBackbone",
    "LstmBackbone",
    "TransformerBackbone",
    "GaussianPolicyHead",
    "ValueHead",
    "save_checkpoint",
    "load_checkpoint",
    "rng_state_to_array",
    "array_to_rng_state",
    "Adam",
    "clip_grad_norm",
    "global_grad_norm",
]
