"""Minimal differentiable tensor engine.

Everything the models need and nothing more: a static DAG of named
layers over float64 numpy arrays, reverse-mode gradients written by
hand, an Adam optimizer, finite-difference gradient checking, and a
compact binary weight format. Parameters are kept on the float32 grid
so a saved network reproduces its in-memory outputs bit-exactly.
"""

from .engine import LayerSpec, Network, ShapeMismatch, StaleCache
from .losses import mse_loss, sigmoid_ce_loss
from .optim import adam_state, optimizer_step
from .gradcheck import gradient_check
from .serial import CorruptWeights, save_network, load_network, WEIGHT_MAGIC

__all__ = [
    "LayerSpec",
    "Network",
    "ShapeMismatch",
    "StaleCache",
    "mse_loss",
    "sigmoid_ce_loss",
    "adam_state",
    "optimizer_step",
    "gradient_check",
    "CorruptWeights",
    "save_network",
    "load_network",
    "WEIGHT_MAGIC",
]
