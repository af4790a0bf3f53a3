"""Small differentiable CNN with hand-written backward passes (float64 throughout)."""
from .attention import AttentionInputs, attention_weights, masked_attention
from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    DEFAULT_ARCH,
    AdamState,
    ModelParams,
    TrainingError,
    adam_step,
    build_layers,
    build_small_cnn,
    default_arch,
    init_params,
    sgd_step,
)
from .ops import (
    bce_loss,
    conv2d_backward,
    conv2d_forward,
    masked_gradient_oracle,
)

__all__ = [
    "AttentionInputs", "attention_weights", "masked_attention",
    "load_checkpoint", "save_checkpoint",
    "DEFAULT_ARCH", "AdamState", "ModelParams", "TrainingError", "adam_step", "build_layers",
    "build_small_cnn", "default_arch", "init_params", "sgd_step",
    "bce_loss", "conv2d_backward", "conv2d_forward", "masked_gradient_oracle",
]
