"""Reverse-mode differentiation, feedforward networks and Adam."""

from . import tape as ops
from .gradcheck import grad_check
from .mlp import MlpModel, forward, forward_with_input_gradient
from .optim import OptimizerState, TrainResult, fit, optimizer_step
from .tape import Tape, Tensor, backward

__all__ = [
    "MlpModel", "OptimizerState", "Tape", "Tensor", "TrainResult", "backward", "fit",
    "forward", "forward_with_input_gradient", "grad_check", "ops", "optimizer_step",
]
