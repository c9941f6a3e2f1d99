from .layers import BatchNormLayer, Conv2dLayer, ConvBNReLU, LinearLayer, Module
from .ops import (add, add_n, batchnorm, concat_channels, conv2d, index_rows, linear, mul, relu,
                  reshape, scale, sum_axis, total, upsample2x_bilinear)
from .optim import Optimizer, adam_step, lr_schedule, sgd_step
from .tensor import Parameter, Tensor, default_dtype, precision, set_default_dtype

__all__ = [
    "BatchNormLayer", "Conv2dLayer", "ConvBNReLU", "LinearLayer", "Module", "Optimizer",
    "Parameter", "Tensor", "add", "add_n", "adam_step", "batchnorm", "concat_channels", "conv2d",
    "default_dtype", "index_rows", "linear", "lr_schedule", "mul", "precision", "relu", "reshape",
    "scale", "set_default_dtype", "sgd_step", "sum_axis", "total", "upsample2x_bilinear",
]
