"""Small reverse-mode sequential model core (numpy)."""

from .graph import LayerGraph, Parameter, concat_graphs
from .gradcheck import GradCheckReport, check_loss_gradient, grad_check, numeric_gradient
from .layers import ConcatAux, Conv2D, Dense, Flatten, Layer, MaxPool2D, ReLU, Softmax, log_softmax, softmax
from .optim import SGD, Adam, Optimizer, StepSchedule, make_optimizer

__all__ = [
    "Adam", "ConcatAux", "Conv2D", "Dense", "Flatten", "GradCheckReport", "Layer",
    "LayerGraph", "MaxPool2D", "Optimizer", "Parameter", "ReLU", "SGD", "Softmax",
    "StepSchedule", "check_loss_gradient", "concat_graphs", "grad_check",
    "log_softmax", "make_optimizer", "numeric_gradient", "softmax",
]
