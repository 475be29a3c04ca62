"""Minimal reverse-mode autodiff, MLP layers, optimizers, and checkpoints."""

from .checkpoint import load_mlp, params_hash, save_mlp
from .layers import ACTIVATIONS, MlpSpec, Tensor, forward, forward_var, init_params, mlp_eval
from .optim import OptimizerState, adam, sgd, step
from .tape import Tape, Var, backward, concat, maximum, softmax

__all__ = [
    "ACTIVATIONS", "MlpSpec", "OptimizerState", "Tape", "Tensor", "Var",
    "adam", "backward", "concat", "forward", "forward_var", "init_params",
    "load_mlp", "maximum", "mlp_eval", "params_hash", "save_mlp", "sgd",
    "softmax", "step",
]
