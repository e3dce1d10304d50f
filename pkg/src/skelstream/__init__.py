"""Online skeleton action recognition with graph attention and latent
extrapolation, built on a small numpy autodiff core."""

from . import errors
from .config import ModelConfig, TrainConfig
from .data import generate_dataset, load_jsonl, save_jsonl
from .evaluation import EvalReport, evaluate_ratios, observation_auc
from .model import StreamSession, forward, init_model
from .tensor import (
    GradReport,
    Tensor,
    concat,
    grad_check,
    layer_norm,
    log,
    matmul,
    no_grad,
    relu,
    softmax,
    stack,
)
from .training import train
from .verify import run_verification

__all__ = [
    "EvalReport",
    "GradReport",
    "ModelConfig",
    "StreamSession",
    "Tensor",
    "TrainConfig",
    "concat",
    "errors",
    "evaluate_ratios",
    "forward",
    "generate_dataset",
    "grad_check",
    "init_model",
    "layer_norm",
    "load_jsonl",
    "log",
    "matmul",
    "no_grad",
    "observation_auc",
    "relu",
    "run_verification",
    "save_jsonl",
    "softmax",
    "stack",
    "train",
]
