"""Adam with bias correction, and convex target-network blending."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sscp.nn.params import ParamBlock

Array = np.ndarray


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: dict[str, Array]
    v: dict[str, Array]
    t: int = 0

    @classmethod
    def for_block(cls, block: ParamBlock) -> "AdamState":
        return cls(
            m={n: np.zeros_like(a) for n, a in block.items()},
            v={n: np.zeros_like(a) for n, a in block.items()},
        )


def adam_step(
    block: ParamBlock,
    grads: dict[str, Array],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One update in place on ``block``. Missing grads are treated as zero."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name in block.names():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(block[name])
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        block[name] = block[name] - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def soft_update(target: ParamBlock, online: ParamBlock, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, array by array."""
    if target.names() != online.names():
        raise ValueError("target and online blocks have different parameter sets")
    for name in target.names():
        target[name] = (1.0 - tau) * target[name] + tau * online[name]
