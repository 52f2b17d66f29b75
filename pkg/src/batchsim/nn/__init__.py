"""Reverse-mode autodiff on numpy arrays and the recurrent navigation policy."""

from .checkpoint import decode_tensors, encode_tensors, load_tensors, save_tensors
from .functional import conv2d, depth_to_space, space_to_depth
from .layers import NO_TRUST, Conv2d, FixupBlock, Linear, LSTMCell, Module, Parameter, SqueezeExcite
from .policy import Policy, PolicyConfig, PolicyOutput, encode_compass
from .tensor import Tensor, no_grad

__all__ = [
    "NO_TRUST",
    "Conv2d",
    "FixupBlock",
    "LSTMCell",
    "Linear",
    "Module",
    "Parameter",
    "Policy",
    "PolicyConfig",
    "PolicyOutput",
    "SqueezeExcite",
    "Tensor",
    "conv2d",
    "decode_tensors",
    "depth_to_space",
    "encode_compass",
    "encode_tensors",
    "load_tensors",
    "no_grad",
    "save_tensors",
    "space_to_depth",
]
