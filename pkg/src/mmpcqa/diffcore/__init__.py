from .tensor import Tensor, tensor
from .ops import (
    add, bmm, concat, conv2d, global_average_pool_2d, layer_norm, matmul,
    max_pool_rows, mean_pool_rows, permute, relu, reshape, scale_by, softmax,
    transpose_last2,
)
from .gradcheck import grad_check, operator_checks
from .params import ParameterStore, adam_step, init_params
from . import checkpoint

__all__ = [
    "Tensor", "tensor",
    "add", "bmm", "concat", "conv2d", "global_average_pool_2d", "layer_norm",
    "matmul", "max_pool_rows", "mean_pool_rows", "permute", "relu", "reshape",
    "scale_by", "softmax", "transpose_last2",
    "grad_check", "operator_checks",
    "ParameterStore", "adam_step", "init_params", "checkpoint",
]
