"""Numeric core: tape autodiff, parameter containers, MLP blocks, Adam."""

from sscp.nn.autodiff import Tensor
from sscp.nn.params import ParamBlock

__all__ = ["Tensor", "ParamBlock"]
