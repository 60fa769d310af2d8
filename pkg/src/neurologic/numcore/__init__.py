"""Dense float64 autodiff, MLP layers and optimisers."""
from .checkpoint import FORMAT_TAG, load, save
from .gradcheck import grad, grad_check
from .nn import MLPSpec, ParamSet, glorot_uniform, init_mlp, mlp_apply
from .optim import CosineRestarts, OptimizerState, opt_step
from .tensor import (ContractError, NumericError, ShapeError, Tensor, as_tensor,
                     broadcast_to, clip, concat, exp, log, matmul, no_grad, relu,
                     reshape, sigmoid, softmax, square, swap_last, take)

__all__ = [
    "FORMAT_TAG", "load", "save", "grad", "grad_check", "MLPSpec", "ParamSet",
    "glorot_uniform", "init_mlp", "mlp_apply", "CosineRestarts", "OptimizerState",
    "opt_step", "ContractError", "NumericError", "ShapeError", "Tensor", "as_tensor",
    "broadcast_to", "clip", "concat", "exp", "log", "matmul", "no_grad", "relu",
    "reshape", "sigmoid", "softmax", "square", "swap_last", "take",
]
