"""Minimal reverse-mode autodiff engine and the layers the acoustic model needs."""
from .gradcheck import grad_check, grad_check_params, relative_error
from .layers import (
    bigru,
    conv1d,
    dropout,
    embedding,
    gru,
    layer_norm,
    linear,
    mse_loss,
    self_attention,
    sinusoid_positions,
)
from .optim import Adam, noam_lr
from .params import ParamStore
from .tensor import Tensor, as_tensor, concat, no_grad, relu, sigmoid, softmax, tanh

__all__ = [
    "Adam",
    "ParamStore",
    "Tensor",
    "as_tensor",
    "bigru",
    "concat",
    "conv1d",
    "dropout",
    "embedding",
    "grad_check",
    "grad_check_params",
    "gru",
    "layer_norm",
    "linear",
    "mse_loss",
    "no_grad",
    "noam_lr",
    "relative_error",
    "relu",
    "self_attention",
    "sigmoid",
    "sinusoid_positions",
    "softmax",
    "tanh",
]
