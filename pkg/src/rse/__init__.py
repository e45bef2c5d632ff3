"""Residual shuffle-exchange sequence networks in numpy.

An O(n log n) alternative to attention: learnable 2-to-2 switch units on
Beneš-wired shuffle permutations, with a minimal tape-based autodiff core,
algorithmic-task training, and a verification harness.
"""

from .autodiff import (
    DimensionError,
    Tape,
    Tensor,
    ValidationError,
    affine,
    conv1d_strided,
    gelu,
    gradcheck,
    layernorm_nogain,
    permute_seq,
    relu,
    sigmoid,
    softmax_xent,
    tanh,
)
from .network import (
    ModelConfig,
    ModelParams,
    PRESETS,
    benes_block,
    build_model,
    conv_frontend,
    forward_features,
    output_head,
    rse_forward,
    switch_layer,
    switch_layer_count,
)
from .shuffle import (
    ShuffleSpec,
    inverse_shuffle,
    perfect_shuffle,
    rotl_index,
    rotr_index,
    shuffle_permutation,
)
from .train import Optimizer, TrainMetrics, TrainingDiverged, bench_forward, evaluate, train_loop
from .units import AblationFlags, GatedSUParams, RSUParams, gated_su_forward, rsu_forward, rsu_init, swap_half

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "DimensionError",
    "GatedSUParams",
    "ModelConfig",
    "ModelParams",
    "Optimizer",
    "PRESETS",
    "RSUParams",
    "ShuffleSpec",
    "Tape",
    "Tensor",
    "TrainMetrics",
    "TrainingDiverged",
    "ValidationError",
    "affine",
    "bench_forward",
    "benes_block",
    "build_model",
    "conv1d_strided",
    "conv_frontend",
    "evaluate",
    "forward_features",
    "gated_su_forward",
    "gelu",
    "gradcheck",
    "inverse_shuffle",
    "layernorm_nogain",
    "output_head",
    "perfect_shuffle",
    "permute_seq",
    "relu",
    "rotl_index",
    "rotr_index",
    "rse_forward",
    "rsu_forward",
    "rsu_init",
    "shuffle_permutation",
    "sigmoid",
    "softmax_xent",
    "swap_half",
    "switch_layer",
    "switch_layer_count",
    "tanh",
    "train_loop",
]
