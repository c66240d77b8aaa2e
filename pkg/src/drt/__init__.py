"""Lightweight recursive windowed-attention transformer for image deraining.

A numpy-backed implementation built on a minimal reverse-mode autograd
engine: windowed multi-head self-attention, weight-shared recursive
transformer groups, a residual restore pipeline, deterministic Adam
training with bit-exact checkpoints, rain synthesis, and PSNR/SSIM.
"""

__version__ = "0.1.0"

from .tensor import (
    GradCheckReport,
    NumericError,
    ShapeError,
    Tensor,
    backward,
    conv2d,
    gelu,
    grad_check,
    layer_norm,
    leaky_relu,
    linear,
    matmul,
    no_grad,
    softmax,
)
from .attention import (
    AttentionParams,
    WindowLayout,
    multi_head_attention,
    pad_to_window_multiple,
    relative_position_bias,
    window_partition,
    window_reverse,
    wmsa_complexity,
)
from .blocks import RtbParams, StbParams, count_rtb_params, rtb_forward, stb_forward
from .model import (
    DrtParameters,
    MacReport,
    ModelConfig,
    count_macs,
    count_params,
    deep_features,
    forward,
    init_params,
    patch_embed,
    reconstruct,
)
from .checkpoint import Checkpoint, CheckpointFormatError, load_checkpoint, save_checkpoint
from .train import (
    FitResult,
    OptimizerState,
    TrainConfig,
    adam_step,
    augment,
    fit,
    init_adam_state,
    mse_loss,
)
from .imaging import (
    ImagePair,
    RainParams,
    load_image,
    psnr,
    read_pair_manifest,
    save_image,
    ssim,
    synthesize_rain,
    write_pair_manifest,
)

__all__ = [
    "__version__",
    "Tensor",
    "ShapeError",
    "NumericError",
    "no_grad",
    "backward",
    "matmul",
    "linear",
    "softmax",
    "layer_norm",
    "conv2d",
    "leaky_relu",
    "gelu",
    "grad_check",
    "GradCheckReport",
    "WindowLayout",
    "AttentionParams",
    "pad_to_window_multiple",
    "window_partition",
    "window_reverse",
    "relative_position_bias",
    "multi_head_attention",
    "wmsa_complexity",
    "StbParams",
    "RtbParams",
    "stb_forward",
    "rtb_forward",
    "count_rtb_params",
    "ModelConfig",
    "DrtParameters",
    "patch_embed",
    "deep_features",
    "reconstruct",
    "forward",
    "count_params",
    "count_macs",
    "MacReport",
    "init_params",
    "Checkpoint",
    "CheckpointFormatError",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "OptimizerState",
    "FitResult",
    "mse_loss",
    "init_adam_state",
    "adam_step",
    "augment",
    "fit",
    "ImagePair",
    "RainParams",
    "load_image",
    "save_image",
    "synthesize_rain",
    "psnr",
    "ssim",
    "write_pair_manifest",
    "read_pair_manifest",
]
