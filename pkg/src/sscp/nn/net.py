"""MLP trunks and learnable Fourier features for time/step conditioning.

Scalar inputs such as the interpolation time are lifted to raw features
[cos(2 pi x W), sin(2 pi x W)] with a learnable column of frequencies W,
then passed through a two-layer projection MLP (hidden size equal to the
feature dimension, mish activation). Trunks are affine stacks with mish on
every hidden layer and a linear output.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from sscp.nn import autodiff as ad
from sscp.nn.autodiff import Tensor
from sscp.nn.params import ParamBlock
from sscp.seeding import stream_rng

Params = Mapping[str, Tensor]


def mlp_layer_count(params: Params | ParamBlock, prefix: str) -> int:
    n = 0
    while f"{prefix}.l{n}.w" in params:
        n += 1
    return n


def mlp_forward(params: Params, prefix: str, x: Tensor) -> Tensor:
    """Run the affine stack ``{prefix}.l*``; mish between layers, linear last."""
    n = mlp_layer_count(params, prefix)
    if n == 0:
        raise KeyError(f"no layers found under prefix {prefix!r}")
    h = x
    for i in range(n):
        h = ad.add(ad.matmul(h, params[f"{prefix}.l{i}.w"]), params[f"{prefix}.l{i}.b"])
        if i < n - 1:
            h = ad.mish(h)
    return h


def init_fourier(block: ParamBlock, prefix: str, dim: int, master_seed: int) -> None:
    """Parameters for one Fourier feature encoder producing ``dim`` outputs."""
    if dim % 2 != 0:
        raise ValueError(f"fourier dim must be even, got {dim}")
    rng = stream_rng(master_seed, prefix, "freq")
    block[f"{prefix}.freq"] = rng.standard_normal((dim // 2, 1))
    from sscp.nn.params import init_mlp

    init_mlp(block, prefix, (dim, dim, dim), master_seed)


def fourier_raw(freq: Tensor, x: Tensor) -> Tensor:
    """Raw features [cos(2 pi x W), sin(2 pi x W)], each column in [-1, 1].

    ``x`` is a column of scalars, shape (batch, 1); ``freq`` has shape
    (dim/2, 1). Output shape is (batch, dim).
    """
    angles = ad.mul(ad.matmul(x, _transpose(freq)), 2.0 * np.pi)
    return ad.concat([ad.cos(angles), ad.sin(angles)], axis=-1)


def _transpose(t: Tensor) -> Tensor:
    out = t.data.T

    def vjp(g):
        return (g.T,)

    if t.requires_grad:
        return Tensor(out, requires_grad=True, parents=(t,), vjp=vjp)
    return Tensor(out)


def fourier_encode(params: Params, prefix: str, x: Tensor) -> Tensor:
    """Project raw Fourier features of a scalar input through the encoder MLP."""
    raw = fourier_raw(params[f"{prefix}.freq"], x)
    return mlp_forward(params, prefix, raw)


def column(values: np.ndarray | float, batch: int) -> Tensor:
    """Constant (batch, 1) column from a scalar or a length-``batch`` vector."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full((batch, 1), float(arr))
    elif arr.ndim == 1:
        if arr.shape[0] != batch:
            raise ValueError(f"expected {batch} values, got {arr.shape[0]}")
        arr = arr[:, None]
    elif arr.shape != (batch, 1):
        raise ValueError(f"bad column shape {arr.shape}")
    return Tensor(arr)
