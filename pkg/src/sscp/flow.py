"""Completion-augmented flow matching for one-shot action generation.

The network h(s, x_tau, tau, d) is trained to serve two roles selected by
the step-size input d: at d = 0 it is the instantaneous velocity of the
straight interpolation path from noise to data, and at d = 1 - tau it is
the average velocity that completes the path in a single jump,

    x_hat_1 = x_tau + h(s, x_tau, tau, 1 - tau) * (1 - tau).

Sampling an action therefore needs one network evaluation: draw z from a
standard normal and return z + h(s, z, 0, 1). The multi-step Euler sampler
is kept as a reference baseline, not as the deployment path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sscp.nn import autodiff as ad
from sscp.nn.autodiff import Tensor
from sscp.nn.net import column, fourier_encode, init_fourier, mlp_forward
from sscp.nn.params import LiveParams, ParamBlock, init_mlp

Array = np.ndarray

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class CompletionArch:
    """Shapes of one completion network."""

    state_dim: int
    action_dim: int
    widths: tuple[int, ...] = (256, 256)
    time_dim: int = 64


class CompletionModel:
    """A parameter block plus its architecture, with a tape-free predict()."""

    def __init__(self, arch: CompletionArch, params: ParamBlock):
        self.arch = arch
        self.params = params

    @classmethod
    def init(cls, arch: CompletionArch, seed: int) -> "CompletionModel":
        block = ParamBlock()
        init_fourier(block, "tau_enc", arch.time_dim, seed)
        init_fourier(block, "step_enc", arch.time_dim, seed)
        trunk_in = arch.state_dim + arch.action_dim + arch.time_dim
        init_mlp(block, "trunk", (trunk_in, *arch.widths, arch.action_dim), seed)
        return cls(arch, block)

    def bind(self, trainable: bool = True) -> LiveParams:
        return LiveParams(self.params, trainable=trainable)

    def predict(self, s: Array, x: Array, tau, d) -> Array:
        """Completion vector as a plain array; no gradient tape is built."""
        live = LiveParams(self.params, trainable=False)
        return completion_forward(live, self.arch, s, x, tau, d).data

    def copy(self) -> "CompletionModel":
        return CompletionModel(self.arch, self.params.copy())


def _check_times(tau: Array, d: Array) -> None:
    if np.any(tau < -_TIME_TOL) or np.any(tau > 1.0 + _TIME_TOL):
        raise ValueError(f"tau outside [0, 1]: range [{tau.min()}, {tau.max()}]")
    if np.any(d < -_TIME_TOL):
        raise ValueError(f"negative step size d: min {d.min()}")
    excess = tau + d - 1.0
    if np.any(excess > _TIME_TOL):
        raise ValueError(f"tau + d exceeds 1 by {excess.max()}")


def completion_forward(
    live: LiveParams, arch: CompletionArch, s: Array, x: Array, tau, d
) -> Tensor:
    """Graph forward pass. ``tau`` and ``d`` are scalars or per-sample vectors."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if s.shape[0] != x.shape[0]:
        raise ValueError(f"batch mismatch: states {s.shape[0]}, points {x.shape[0]}")
    batch = s.shape[0]
    tau_col = column(tau, batch)
    d_col = column(d, batch)
    _check_times(tau_col.data, d_col.data)
    phi_tau = fourier_encode(live, "tau_enc", tau_col)
    phi_d = fourier_encode(live, "step_enc", d_col)
    temporal = ad.add(phi_tau, phi_d)
    trunk_in = ad.concat([Tensor(s), Tensor(x), temporal], axis=-1)
    return mlp_forward(live, "trunk", trunk_in)


def sample_tau(rng: np.random.Generator, n: int) -> Array:
    """Square of a uniform draw; density 1 / (2 sqrt(tau)), front-loaded near 0.

    ``Generator.random`` samples [0, 1), so tau stays strictly below 1 and
    the completion step size 1 - tau never degenerates to zero.
    """
    t = rng.random(n)
    return t * t


def interpolate(z: Array, a: Array, tau: Array) -> Array:
    """Straight path point x_tau = (1 - tau) z + tau a, tau per sample."""
    tau_col = np.asarray(tau, dtype=np.float64)[:, None]
    return (1.0 - tau_col) * z + tau_col * a


@dataclass
class FlowBatch:
    """One training batch with its noise draw frozen in."""

    s: Array
    a: Array
    z: Array
    tau: Array
    x_tau: Array


def make_flow_batch(rng: np.random.Generator, s: Array, a: Array) -> FlowBatch:
    z = rng.standard_normal(a.shape)
    tau = sample_tau(rng, a.shape[0])
    return FlowBatch(s=s, a=a, z=z, tau=tau, x_tau=interpolate(z, a, tau))


def _mean_sq_norm(diff: Tensor) -> Tensor:
    return ad.tmean(ad.tsum(ad.square(diff), axis=1))


def flow_loss(live: LiveParams, arch: CompletionArch, batch: FlowBatch) -> Tensor:
    """Velocity regression at d = 0 toward the straight-path target a - z."""
    pred = completion_forward(live, arch, batch.s, batch.x_tau, batch.tau, 0.0)
    return _mean_sq_norm(ad.sub(pred, Tensor(batch.a - batch.z)))


def completion_endpoint(
    live: LiveParams, arch: CompletionArch, batch: FlowBatch
) -> Tensor:
    """Single-jump endpoint x_tau + h(s, x_tau, tau, 1 - tau) (1 - tau)."""
    d = 1.0 - batch.tau
    pred = completion_forward(live, arch, batch.s, batch.x_tau, batch.tau, d)
    return ad.add(Tensor(batch.x_tau), ad.mul(pred, Tensor(d[:, None])))


def completion_loss(live: LiveParams, arch: CompletionArch, batch: FlowBatch) -> Tensor:
    """Endpoint regression: the single jump must land on the data action."""
    return _mean_sq_norm(ad.sub(completion_endpoint(live, arch, batch), Tensor(batch.a)))


def bootstrap_shortcut_loss(
    live: LiveParams,
    arch: CompletionArch,
    batch: FlowBatch,
    d,
    target_live: LiveParams | None = None,
) -> Tensor:
    """Self-consistency alternative to the endpoint loss.

    The jump of size d is regressed onto the average of two half jumps
    evaluated under a stop-gradient:

        target = 0.5 * (h(x_tau, tau, d/2) + h(x_mid, tau + d/2, d/2)),
        x_mid  = x_tau + h(x_tau, tau, d/2) * (d/2).

    ``target_live`` selects the parameters used inside the target; it
    defaults to a detached view of ``live``'s own block. Gradient never
    flows through the target regardless of how that binding was created.
    """
    if target_live is None:
        target_live = LiveParams(live.block, trainable=False)
    batch_size = batch.s.shape[0]
    d_col = column(d, batch_size).data
    half = d_col[:, 0] / 2.0
    v1 = completion_forward(target_live, arch, batch.s, batch.x_tau, batch.tau, half)
    x_mid = ad.add(Tensor(batch.x_tau), ad.mul(v1, Tensor(half[:, None])))
    v2 = completion_forward(
        target_live, arch, batch.s, x_mid.data, batch.tau + half, half
    )
    target = 0.5 * (v1.data + v2.data)
    pred = completion_forward(live, arch, batch.s, batch.x_tau, batch.tau, d_col[:, 0])
    return _mean_sq_norm(ad.sub(pred, Tensor(target)))


def _clip_actions(a: Array, bound: float | None) -> Array:
    if bound is None:
        return a
    return np.clip(a, -bound, bound)


def sample_one_step(
    model, s: Array, rng: np.random.Generator, clip_to: float | None = None
) -> Array:
    """Deployment path: one network evaluation per batch of actions."""
    s = np.atleast_2d(s)
    z = rng.standard_normal((s.shape[0], model.arch.action_dim))
    a = z + model.predict(s, z, 0.0, 1.0)
    return _clip_actions(a, clip_to)


def sample_from_intermediate(
    model, s: Array, x_tau: Array, tau, clip_to: float | None = None
) -> Array:
    """Complete the remaining 1 - tau of the path in a single jump."""
    s = np.atleast_2d(s)
    x_tau = np.atleast_2d(x_tau)
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (s.shape[0],))
    d = 1.0 - tau
    a = x_tau + model.predict(s, x_tau, tau, d) * d[:, None]
    return _clip_actions(a, clip_to)


def sample_euler(
    model,
    s: Array,
    rng: np.random.Generator,
    n_steps: int,
    clip_to: float | None = None,
) -> Array:
    """Reference sampler: integrate the d = 0 velocity field on a uniform grid."""
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    s = np.atleast_2d(s)
    x = rng.standard_normal((s.shape[0], model.arch.action_dim))
    dt = 1.0 / n_steps
    for k in range(n_steps):
        x = x + model.predict(s, x, k * dt, 0.0) * dt
    return _clip_actions(x, clip_to)
