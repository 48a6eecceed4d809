"""Finite-difference verification of reverse-mode gradients.

``fd_check`` compares the tape gradient of a scalar loss against central
differences on a sample of coordinates. Detached quantities inside a loss
(bootstrap targets, normalizers) must be pinned by the caller so that the
perturbed evaluations hold them fixed; the helpers here only see a closure
from parameters to a scalar.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from sscp.nn.autodiff import Tensor
from sscp.nn.params import LiveParams, ParamBlock

LossFn = Callable[[LiveParams], Tensor]


def grad_of_scalar(f: LossFn, block: ParamBlock) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate ``f`` on a trainable binding of ``block``; return (value, grads)."""
    live = LiveParams(block, trainable=True)
    out = f(live)
    if out.data.size != 1:
        raise ValueError("loss closure must return a scalar tensor")
    out.backward()
    return out.item(), live.grads()


@dataclass
class FDReport:
    n_checked: int
    max_rel_err: float
    worst_name: str
    worst_index: tuple[int, ...]
    analytic_at_worst: float
    fd_at_worst: float

    def __str__(self) -> str:
        return (
            f"{self.n_checked} coords, max rel err {self.max_rel_err:.3e} "
            f"at {self.worst_name}{list(self.worst_index)} "
            f"(analytic {self.analytic_at_worst:.6e}, fd {self.fd_at_worst:.6e})"
        )


def fd_check(
    f: LossFn,
    block: ParamBlock,
    h: float = 1e-5,
    max_coords_per_array: int = 20,
    rng: np.random.Generator | None = None,
) -> FDReport:
    """Central-difference check of d f / d block on sampled coordinates.

    Relative error uses |a - d| / max(|a|, |d|, 1e-3); the floor makes
    near-zero coordinates an absolute comparison at 1e-7 resolution, well
    above the ~1e-10 noise of central differences on O(1) losses.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    _, grads = grad_of_scalar(f, block)

    def eval_at(b: ParamBlock) -> float:
        return f(LiveParams(b, trainable=False)).item()

    work = block.copy()
    n_checked = 0
    worst = FDReport(0, -1.0, "", (), 0.0, 0.0)
    for name in block.names():
        arr = work[name]
        size = arr.size
        if size <= max_coords_per_array:
            flat_idx = np.arange(size)
        else:
            flat_idx = rng.choice(size, size=max_coords_per_array, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(int(fi), arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            up = eval_at(work)
            arr[idx] = orig - h
            down = eval_at(work)
            arr[idx] = orig
            fd = (up - down) / (2.0 * h)
            an = float(grads[name][idx])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-3)
            n_checked += 1
            if rel > worst.max_rel_err:
                worst = FDReport(0, rel, name, idx, an, fd)
    worst.n_checked = n_checked
    return worst
