"""Goal-conditioned value learning and one-shot hierarchy distillation.

Values come from an action-free expectile recursion: V(s, g) chases the
asymmetric fit of r(s, g) + gamma V(s', g) under relabeled goals, so the
sparse 0 / -1 reward still yields positive targets. A single joint policy
network with discrete hierarchy inputs (k, d) plays three roles:

* (k=0, d=1) proposes a subgoal as a 10-dim learned embedding,
* (k=1, d=1) acts toward a nearby subgoal,
* (k=0, d=2) is a flat head distilled onto the two-stage composition.

The flat head makes deployment a single network evaluation per action;
hierarchical inference stays available as the reference path. Subgoals
never leave embedding space: the high-level sample conditions the low
level directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sscp.data import Dataset
from sscp.envs import MAZE_TASKS, make_env
from sscp.logio import RunLogger
from sscp.nn import autodiff as ad
from sscp.nn.autodiff import Tensor
from sscp.nn.net import column, fourier_encode, init_fourier, mlp_forward
from sscp.nn.optim import AdamState, adam_step, soft_update
from sscp.nn.params import LiveParams, ParamBlock, init_mlp, save_checkpoint
from sscp.seeding import stream_rng
from sscp.sscql import TrainingError

Array = np.ndarray

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class GCConfig:
    """Hyperparameters for goal-conditioned value and policy training."""

    widths: tuple[int, ...] = (256, 256)
    goal_rep_dim: int = 10
    level_dim: int = 128
    gamma: float = 0.99
    expectile: float = 0.7
    beta_high: float = 5.0
    beta_low: float = 5.0
    awr_clip: float = 100.0
    distill_weight: float = 1.0
    subgoal_steps: int = 10
    goal_tol: float = 0.1
    relabel_future: float = 0.7
    relabel_random: float = 0.2  # remainder of the mixture relabels to the current state
    lr: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch: int = 256
    steps: int = 20_000
    tau_value: float = 0.005
    tau_policy: float = 0.001
    train_policy: bool = True
    eval_every: int = 1000
    eval_episodes: int = 10  # per fixed task
    log_every: int = 100

    def __post_init__(self) -> None:
        if not 0.0 < self.expectile < 1.0:
            raise ValueError(f"expectile must lie in (0, 1), got {self.expectile}")
        if self.relabel_future < 0 or self.relabel_random < 0:
            raise ValueError("relabel fractions must be non-negative")
        if self.relabel_future + self.relabel_random > 1.0:
            raise ValueError("relabel fractions exceed 1")


class TrajStore:
    """Columnar dataset view with trajectory bounds for goal/subgoal lookup.

    A trajectory of T transitions visits T + 1 states; index j in [0, T]
    addresses them, with j = T resolving to the final next-state.
    """

    def __init__(self, ds: Dataset):
        self.s = ds.s
        self.a = ds.a
        self.sp = ds.sp
        self.t = ds.t
        self.goal_dim = ds.meta.goal_dim or ds.meta.state_dim
        slices = ds.traj_slices()
        self.traj_lo = np.array([lo for lo, _ in slices], dtype=np.int64)
        self.traj_hi = np.array([hi for _, hi in slices], dtype=np.int64)
        n = len(ds)
        self.row_lo = np.zeros(n, dtype=np.int64)
        self.row_hi = np.zeros(n, dtype=np.int64)
        for lo, hi in slices:
            self.row_lo[lo:hi] = lo
            self.row_hi[lo:hi] = hi

    def __len__(self) -> int:
        return self.s.shape[0]

    def n_trajectories(self) -> int:
        return len(self.traj_lo)

    def traj_length(self, traj: int) -> int:
        return int(self.traj_hi[traj] - self.traj_lo[traj])

    def state_at(self, traj: int, j: int) -> Array:
        """State j steps into the trajectory; j = length gives the last state."""
        if not 0 <= traj < self.n_trajectories():
            raise IndexError(f"trajectory {traj} out of range")
        lo, hi = int(self.traj_lo[traj]), int(self.traj_hi[traj])
        length = hi - lo
        if not 0 <= j <= length:
            raise IndexError(f"step {j} outside trajectory of length {length}")
        if j == length:
            return self.sp[hi - 1].copy()
        return self.s[lo + j].copy()

    def states_at(self, rows: Array, j: Array) -> Array:
        """Vectorized state_at for the trajectories owning the given rows."""
        lo = self.row_lo[rows]
        hi = self.row_hi[rows]
        length = hi - lo
        if np.any(j < 0) or np.any(j > length):
            raise IndexError("step index outside its trajectory")
        out = self.s[lo + np.minimum(j, length - 1)].copy()
        at_end = j == length
        if np.any(at_end):
            out[at_end] = self.sp[hi[at_end] - 1]
        return out


def subgoal_lookup(
    store: TrajStore, traj: int, t: int, k: int, t_g: int
) -> tuple[Array, int]:
    """Subgoal state k-tilde = min(k, t_g - t, T - t) steps ahead of t.

    The clip keeps the subgoal on the trajectory and never past the goal's
    own timestep t_g.
    """
    length = store.traj_length(traj)
    if not 0 <= t <= length:
        raise IndexError(f"t={t} outside trajectory of length {length}")
    if not t <= t_g <= length:
        raise ValueError(f"goal timestep t_g={t_g} not in [{t}, {length}]")
    k_tilde = min(k, t_g - t, length - t)
    return store.state_at(traj, t + k_tilde), k_tilde


@dataclass(frozen=True)
class ValueArch:
    state_dim: int
    goal_dim: int
    rep_dim: int = 10
    widths: tuple[int, ...] = (256, 256)


class ValueTwin:
    """Two goal-conditioned value heads over a shared goal encoder.

    The encoder e(s, g) produces a 10-dim goal representation; each head
    maps [s, e(s, g)] to a scalar. Twin heads keep independent soft-updated
    targets; the encoder itself has no target copy and is trained only
    through the value loss.
    """

    def __init__(
        self,
        arch: ValueArch,
        enc: ParamBlock,
        v1: ParamBlock,
        v2: ParamBlock,
        v1_target: ParamBlock,
        v2_target: ParamBlock,
    ):
        self.arch = arch
        self.enc = enc
        self.v1 = v1
        self.v2 = v2
        self.v1_target = v1_target
        self.v2_target = v2_target

    @classmethod
    def init(cls, arch: ValueArch, seed: int) -> "ValueTwin":
        enc = ParamBlock()
        enc_sizes = (arch.state_dim + arch.goal_dim, *arch.widths, arch.rep_dim)
        init_mlp(enc, "enc", enc_sizes, master_seed=int(stream_rng(seed, "enc").integers(2**31)))
        head_sizes = (arch.state_dim + arch.rep_dim, *arch.widths, 1)
        heads = []
        for tag in ("v1", "v2"):
            block = ParamBlock()
            init_mlp(block, "v", head_sizes, master_seed=int(stream_rng(seed, tag).integers(2**31)))
            heads.append(block)
        return cls(arch, enc, heads[0], heads[1], heads[0].copy(), heads[1].copy())


def _goal_rows(g, batch: int, goal_dim: int) -> Array:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 1:
        g = np.broadcast_to(g, (batch, goal_dim))
    return g


def encode_goal(live_enc: LiveParams, s: Array, g: Array) -> Tensor:
    """Graph forward of the goal encoder e(s, g) -> (batch, rep_dim)."""
    s = np.atleast_2d(s)
    g = _goal_rows(g, s.shape[0], np.atleast_2d(g).shape[-1])
    return mlp_forward(live_enc, "enc", Tensor(np.concatenate([s, g], axis=1)))


def encode_np(enc: ParamBlock, s: Array, g: Array) -> Array:
    return encode_goal(LiveParams(enc, trainable=False), s, g).data


def value_head(live_v: LiveParams, s: Array, rep: Tensor) -> Tensor:
    """Graph forward of one value head on [s, rep] -> (batch, 1)."""
    joined = ad.concat([Tensor(np.atleast_2d(s)), rep], axis=-1)
    return mlp_forward(live_v, "v", joined)


def value_np(v: ParamBlock, enc: ParamBlock, s: Array, g: Array) -> Array:
    rep = Tensor(encode_np(enc, s, g))
    return value_head(LiveParams(v, trainable=False), s, rep).data[:, 0]


def twin_value(twin: ValueTwin, s: Array, g: Array) -> Array:
    """Mean of the two online heads; the scalar used by all advantages."""
    return 0.5 * (value_np(twin.v1, twin.enc, s, g) + value_np(twin.v2, twin.enc, s, g))


def expectile_loss(u: Tensor, expectile: float) -> Tensor:
    """Asymmetric squared loss |xi - 1(u < 0)| u^2, elementwise."""
    if not 0.0 < expectile < 1.0:
        raise ValueError(f"expectile must lie in (0, 1), got {expectile}")
    weight = np.where(u.data < 0, 1.0 - expectile, expectile)
    return ad.mul(ad.square(u), Tensor(weight))


def goal_reward(s: Array, g: Array, tol: float) -> tuple[Array, Array]:
    """Sparse reward 0 inside the goal ball else -1, plus the bootstrap mask.

    Reaching the goal is terminal, so the mask zeroes the next-state value
    exactly where the reward is 0.
    """
    s = np.atleast_2d(s)
    g = np.atleast_2d(g)
    reached = np.linalg.norm(s[:, : g.shape[1]] - g, axis=1) <= tol
    return np.where(reached, 0.0, -1.0), 1.0 - reached.astype(np.float64)


def gcivl_target(
    twin: ValueTwin, s: Array, g: Array, sp: Array, gamma: float, tol: float
) -> Array:
    """Detached target q-hat = r + gamma * mask * min(V1'(s', g), V2'(s', g))."""
    r, mask = goal_reward(s, g, tol)
    v1 = value_np(twin.v1_target, twin.enc, sp, g)
    v2 = value_np(twin.v2_target, twin.enc, sp, g)
    return r + gamma * mask * np.minimum(v1, v2)


def gcivl_loss(
    live_enc: LiveParams,
    live_v1: LiveParams,
    live_v2: LiveParams,
    s: Array,
    g: Array,
    q_hat: Array,
    expectile: float,
) -> Tensor:
    """Sum over both heads of the mean expectile loss against the shared target."""
    rep = encode_goal(live_enc, s, g)
    target = Tensor(q_hat[:, None])
    l1 = ad.tmean(expectile_loss(ad.sub(target, value_head(live_v1, s, rep)), expectile))
    l2 = ad.tmean(expectile_loss(ad.sub(target, value_head(live_v2, s, rep)), expectile))
    return ad.add(l1, l2)


def advantage_high(twin: ValueTwin, s: Array, gp: Array, g: Array) -> Array:
    """V(g', g) - V(s, g): progress credited to proposing subgoal state g'."""
    return twin_value(twin, gp, g) - twin_value(twin, s, g)


def advantage_low(twin: ValueTwin, s: Array, sp: Array, g: Array) -> Array:
    """V(s', g) - V(s, g): one-step progress toward the conditioning goal."""
    return twin_value(twin, sp, g) - twin_value(twin, s, g)


@dataclass(frozen=True)
class PolicyArch:
    state_dim: int
    action_dim: int
    goal_rep_dim: int = 10
    widths: tuple[int, ...] = (256, 256)
    level_dim: int = 128

    @property
    def out_dim(self) -> int:
        return self.action_dim + self.goal_rep_dim


class HierarchyPolicy:
    """Joint diagonal Gaussian over (action, subgoal embedding).

    The hierarchy indicators k and d enter as Fourier-encoded reals whose
    encodings are added, mirroring the temporal conditioning of the
    completion network. The trunk outputs mean and log-std for every slot;
    log-std is clamped to [-5, 2].
    """

    def __init__(self, arch: PolicyArch, params: ParamBlock):
        self.arch = arch
        self.params = params

    @classmethod
    def init(cls, arch: PolicyArch, seed: int) -> "HierarchyPolicy":
        block = ParamBlock()
        init_fourier(block, "k_enc", arch.level_dim, seed)
        init_fourier(block, "d_enc", arch.level_dim, seed)
        trunk_in = arch.state_dim + arch.goal_rep_dim + arch.level_dim
        init_mlp(block, "trunk", (trunk_in, *arch.widths, 2 * arch.out_dim), seed)
        return cls(arch, block)

    def bind(self, trainable: bool = True) -> LiveParams:
        return LiveParams(self.params, trainable=trainable)

    def raw_forward(
        self, live: LiveParams, s: Array, cond, k: float, d: float
    ) -> tuple[Tensor, Tensor]:
        """Mean and clamped log-std columns; ``cond`` may carry gradient."""
        s = np.atleast_2d(s)
        batch = s.shape[0]
        cond_t = cond if isinstance(cond, Tensor) else Tensor(np.atleast_2d(cond))
        phi_k = fourier_encode(live, "k_enc", column(k, batch))
        phi_d = fourier_encode(live, "d_enc", column(d, batch))
        trunk_in = ad.concat([Tensor(s), cond_t, ad.add(phi_k, phi_d)], axis=-1)
        out = mlp_forward(live, "trunk", trunk_in)
        mean = ad.narrow(out, 0, self.arch.out_dim, axis=1)
        log_std = ad.clip(
            ad.narrow(out, self.arch.out_dim, self.arch.out_dim, axis=1),
            LOG_STD_MIN,
            LOG_STD_MAX,
        )
        return mean, log_std

    def sample(self, s: Array, cond: Array, k: float, d: float, rng: np.random.Generator) -> Array:
        """Reparameterized draw as a plain array; no tape is built."""
        live = LiveParams(self.params, trainable=False)
        mean, log_std = self.raw_forward(live, s, cond, k, d)
        return mean.data + np.exp(log_std.data) * rng.standard_normal(mean.data.shape)

    def copy(self) -> "HierarchyPolicy":
        return HierarchyPolicy(self.arch, self.params.copy())


def gaussian_nll(mean: Tensor, log_std: Tensor, x: Array) -> Tensor:
    """Per-sample negative log-density of a diagonal Gaussian, shape (batch,)."""
    z = ad.mul(ad.sub(Tensor(np.atleast_2d(x)), mean), ad.exp(ad.neg(log_std)))
    per_dim = ad.add(ad.add(log_std, ad.mul(ad.square(z), 0.5)), _HALF_LOG_2PI)
    return ad.tsum(per_dim, axis=1)


def policy_log_prob(
    policy: HierarchyPolicy, s: Array, cond: Array, k: float, d: float, x: Array
) -> Array:
    """Log-density of x under the (k, d) head; tape-free convenience."""
    live = LiveParams(policy.params, trainable=False)
    mean, log_std = policy.raw_forward(live, s, cond, k, d)
    return -gaussian_nll(mean, log_std, x).data


@dataclass
class GoalBatch:
    """One policy minibatch with relabeled goals and clipped subgoals."""

    s: Array
    a: Array
    sp: Array
    g: Array  # goal for the high level, a future state's goal projection
    gp: Array  # subgoal state at t + k_tilde on the same trajectory
    k_tilde: Array
    adv_high: Array
    adv_low: Array


def _future_goal_steps(store: TrajStore, rows: Array, rng: np.random.Generator) -> Array:
    """Uniform goal timestep t_g in {t+1, ..., T} for each row's trajectory."""
    t = store.t[rows]
    length = store.row_hi[rows] - store.row_lo[rows]
    return rng.integers(t + 1, length + 1)


def make_goal_batch(
    store: TrajStore, twin: ValueTwin, cfg: GCConfig, rng: np.random.Generator
) -> GoalBatch:
    """Sample rows, relabel goals to future states, clip subgoals, score both levels."""
    rows = rng.integers(len(store), size=cfg.batch)
    s, a, sp = store.s[rows], store.a[rows], store.sp[rows]
    t = store.t[rows]
    t_g = _future_goal_steps(store, rows, rng)
    length = store.row_hi[rows] - store.row_lo[rows]
    g = store.states_at(rows, t_g)[:, : store.goal_dim]
    k_tilde = np.minimum(np.minimum(cfg.subgoal_steps, t_g - t), length - t)
    gp = store.states_at(rows, t + k_tilde)
    gp_goal = gp[:, : store.goal_dim]
    return GoalBatch(
        s=s,
        a=a,
        sp=sp,
        g=g,
        gp=gp,
        k_tilde=k_tilde,
        adv_high=advantage_high(twin, s, gp, g),
        adv_low=advantage_low(twin, s, sp, gp_goal),
    )


def awr_loss(
    policy: HierarchyPolicy,
    live: LiveParams,
    enc: ParamBlock,
    batch: GoalBatch,
    level: int,
    cfg: GCConfig,
) -> Tensor:
    """Advantage-weighted regression for one hierarchy level.

    Level 0 regresses (a_t, e(s_t, g')) conditioned on the episode goal;
    level 1 regresses (a_t, e(s_t, s_{t+1})) conditioned on the subgoal.
    Advantages and every encoder output are detached, so the gradient
    reaches only the policy.
    """
    goal_dim = batch.g.shape[1]
    if level == 0:
        cond = encode_np(enc, batch.s, batch.g)
        target_rep = encode_np(enc, batch.s, batch.gp[:, :goal_dim])
        adv, beta, k = batch.adv_high, cfg.beta_high, 0.0
    elif level == 1:
        cond = encode_np(enc, batch.s, batch.gp[:, :goal_dim])
        target_rep = encode_np(enc, batch.s, batch.sp[:, :goal_dim])
        adv, beta, k = batch.adv_low, cfg.beta_low, 1.0
    else:
        raise ValueError(f"level must be 0 or 1, got {level}")
    target = np.concatenate([batch.a, target_rep], axis=1)
    weights = np.minimum(np.exp(beta * adv), cfg.awr_clip)
    mean, log_std = policy.raw_forward(live, batch.s, cond, k, 1.0)
    return ad.tmean(ad.mul(gaussian_nll(mean, log_std, target), Tensor(weights)))


def distill_targets(
    policy: HierarchyPolicy,
    s: Array,
    cond: Array,
    rng: np.random.Generator,
    target_live: LiveParams | None = None,
) -> Tensor:
    """Two-stage composed sample: subgoal embedding from (k=0, d=1), then
    (action, next-embedding) from (k=1, d=1) conditioned on it.

    ``target_live`` selects the parameters behind both stages; it defaults
    to a detached view of the policy's own block. The caller consumes
    ``.data``, so no gradient ever flows back through the composition.
    """
    if target_live is None:
        target_live = LiveParams(policy.params, trainable=False)
    arch = policy.arch
    mean_h, ls_h = policy.raw_forward(target_live, s, cond, 0.0, 1.0)
    eps_h = rng.standard_normal(mean_h.data.shape)
    sample_h = ad.add(mean_h, ad.mul(ad.exp(ls_h), Tensor(eps_h)))
    g_hat = ad.narrow(sample_h, arch.action_dim, arch.goal_rep_dim, axis=1)
    mean_l, ls_l = policy.raw_forward(target_live, s, g_hat, 1.0, 1.0)
    eps_l = rng.standard_normal(mean_l.data.shape)
    return ad.add(mean_l, ad.mul(ad.exp(ls_l), Tensor(eps_l)))


def distill_loss(
    policy: HierarchyPolicy,
    live: LiveParams,
    enc: ParamBlock,
    batch: GoalBatch,
    rng: np.random.Generator,
    target_live: LiveParams | None = None,
) -> Tensor:
    """Negative log-density of the flat (k=0, d=2) head at the composed target."""
    cond = encode_np(enc, batch.s, batch.g)
    target = distill_targets(policy, batch.s, cond, rng, target_live).data
    mean, log_std = policy.raw_forward(live, batch.s, cond, 0.0, 2.0)
    return ad.tmean(gaussian_nll(mean, log_std, target))


@dataclass
class GCState:
    """Everything that evolves during goal-conditioned training."""

    cfg: GCConfig
    twin: ValueTwin
    policy: HierarchyPolicy
    policy_target: ParamBlock
    opt_enc: AdamState
    opt_v1: AdamState
    opt_v2: AdamState
    opt_policy: AdamState
    rng: np.random.Generator
    goal_dim: int
    action_bound: float
    step: int = 0

    @classmethod
    def init(
        cls,
        cfg: GCConfig,
        state_dim: int,
        action_dim: int,
        goal_dim: int,
        seed: int,
        action_bound: float = 1.0,
    ) -> "GCState":
        twin = ValueTwin.init(
            ValueArch(state_dim, goal_dim, cfg.goal_rep_dim, tuple(cfg.widths)),
            seed=int(stream_rng(seed, "values").integers(2**31)),
        )
        policy = HierarchyPolicy.init(
            PolicyArch(
                state_dim, action_dim, cfg.goal_rep_dim, tuple(cfg.widths), cfg.level_dim
            ),
            seed=int(stream_rng(seed, "policy").integers(2**31)),
        )
        return cls(
            cfg=cfg,
            twin=twin,
            policy=policy,
            policy_target=policy.params.copy(),
            opt_enc=AdamState.for_block(twin.enc),
            opt_v1=AdamState.for_block(twin.v1),
            opt_v2=AdamState.for_block(twin.v2),
            opt_policy=AdamState.for_block(policy.params),
            rng=stream_rng(seed, "train"),
            goal_dim=goal_dim,
            action_bound=action_bound,
        )

    def blocks_for_checkpoint(self) -> dict[str, ParamBlock]:
        return {
            "enc": self.twin.enc,
            "v1": self.twin.v1,
            "v2": self.twin.v2,
            "v1_target": self.twin.v1_target,
            "v2_target": self.twin.v2_target,
            "policy": self.policy.params,
            "policy_target": self.policy_target,
        }


def _relabel_value_goals(
    store: TrajStore, rows: Array, cfg: GCConfig, rng: np.random.Generator
) -> Array:
    """Mixture of future-state (0.7), random-state (0.2), current-state goals.

    Every stream is drawn unconditionally so the generator advances the
    same way regardless of the mixture split.
    """
    u = rng.random(rows.shape[0])
    t_g = _future_goal_steps(store, rows, rng)
    random_rows = rng.integers(len(store), size=rows.shape[0])
    future = store.states_at(rows, t_g)
    anywhere = store.s[random_rows]
    current = store.s[rows]
    goals = np.where(
        (u < cfg.relabel_future)[:, None],
        future,
        np.where(
            (u < cfg.relabel_future + cfg.relabel_random)[:, None], anywhere, current
        ),
    )
    return goals[:, : store.goal_dim]


def gc_train_step(state: GCState, store: TrajStore) -> dict:
    """One value update, optional policy update, then target blends."""
    cfg = state.cfg
    twin = state.twin
    metrics: dict = {}

    rows = state.rng.integers(len(store), size=cfg.batch)
    s, sp = store.s[rows], store.sp[rows]
    g = _relabel_value_goals(store, rows, cfg, state.rng)
    q_hat = gcivl_target(twin, s, g, sp, cfg.gamma, cfg.goal_tol)
    live_enc = LiveParams(twin.enc)
    live_v1 = LiveParams(twin.v1)
    live_v2 = LiveParams(twin.v2)
    v_loss = gcivl_loss(live_enc, live_v1, live_v2, s, g, q_hat, cfg.expectile)
    v_loss.backward()
    adam_step(twin.enc, live_enc.grads(), state.opt_enc, cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
    adam_step(twin.v1, live_v1.grads(), state.opt_v1, cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
    adam_step(twin.v2, live_v2.grads(), state.opt_v2, cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
    metrics["value_loss"] = v_loss.item()

    if cfg.train_policy:
        gb = make_goal_batch(store, twin, cfg, state.rng)
        live_p = state.policy.bind(trainable=True)
        l_high = awr_loss(state.policy, live_p, twin.enc, gb, 0, cfg)
        l_low = awr_loss(state.policy, live_p, twin.enc, gb, 1, cfg)
        l_distill = distill_loss(state.policy, live_p, twin.enc, gb, state.rng)
        total = ad.add(ad.add(l_high, l_low), ad.mul(l_distill, cfg.distill_weight))
        total.backward()
        adam_step(
            state.policy.params, live_p.grads(), state.opt_policy,
            cfg.lr, cfg.adam_beta1, cfg.adam_beta2,
        )
        metrics["awr_high"] = l_high.item()
        metrics["awr_low"] = l_low.item()
        metrics["distill"] = l_distill.item()
        metrics["policy_loss"] = total.item()

    soft_update(twin.v1_target, twin.v1, cfg.tau_value)
    soft_update(twin.v2_target, twin.v2, cfg.tau_value)
    soft_update(state.policy_target, state.policy.params, cfg.tau_policy)

    state.step += 1
    metrics["step"] = state.step
    bad = [k for k, v in metrics.items() if isinstance(v, float) and not np.isfinite(v)]
    if bad:
        raise TrainingError(f"non-finite metrics at step {state.step}: {bad} ({metrics})")
    return metrics


def infer_hierarchical(
    policy: HierarchyPolicy,
    enc: ParamBlock,
    s: Array,
    g: Array,
    rng: np.random.Generator,
    clip_to: float | None = None,
) -> Array:
    """Reference two-stage path: sample a subgoal embedding, then the action."""
    s = np.atleast_2d(s)
    cond = encode_np(enc, s, g)
    high = policy.sample(s, cond, 0.0, 1.0, rng)
    g_hat = high[:, policy.arch.action_dim :]
    low = policy.sample(s, g_hat, 1.0, 1.0, rng)
    a = low[:, : policy.arch.action_dim]
    return a if clip_to is None else np.clip(a, -clip_to, clip_to)


def infer_flat(
    policy: HierarchyPolicy,
    enc: ParamBlock,
    s: Array,
    g: Array,
    rng: np.random.Generator,
    clip_to: float | None = None,
) -> Array:
    """Deployment path: one evaluation of the distilled (k=0, d=2) head."""
    s = np.atleast_2d(s)
    cond = encode_np(enc, s, g)
    out = policy.sample(s, cond, 0.0, 2.0, rng)
    a = out[:, : policy.arch.action_dim]
    return a if clip_to is None else np.clip(a, -clip_to, clip_to)


def evaluate_goal_policy(
    policy: HierarchyPolicy,
    enc: ParamBlock,
    env_name: str,
    mode: str,
    episodes_per_task: int,
    eval_seed: int,
    tasks=MAZE_TASKS,
    action_bound: float = 1.0,
) -> tuple[float, list[float]]:
    """Success rate overall and per fixed task for one inference mode."""
    if mode == "flat":
        infer = infer_flat
    elif mode == "hier":
        infer = infer_hierarchical
    else:
        raise ValueError(f"mode must be 'flat' or 'hier', got {mode!r}")
    env = make_env(env_name)
    per_goal: list[float] = []
    for ti, (start, goal) in enumerate(tasks):
        wins = 0
        for ep in range(episodes_per_task):
            ep_seed = int(stream_rng(eval_seed, "episode", ti, ep).integers(2**31))
            action_rng = stream_rng(eval_seed, "actions", ti, ep)
            s = env.reset(seed=ep_seed, start_cell=start, goal_cell=goal)
            g = env.goal.copy()
            done = False
            while not done:
                a = infer(policy, enc, s[None, :], g, action_rng, clip_to=action_bound)[0]
                s, _, done = env.step(a)
            wins += int(env.terminated)
        per_goal.append(wins / episodes_per_task)
    return float(np.mean(per_goal)), per_goal


@dataclass
class GCRunResult:
    success_flat: float
    success_hier: float
    per_goal_flat: list[float]
    per_goal_hier: list[float]
    steps: int
    out_dir: Path
    log_path: Path
    checkpoint_path: Path
    state: GCState


def run_gcrl(dataset: Dataset, cfg: GCConfig, seed: int, out_dir: str | Path) -> GCRunResult:
    """Train on a goal-reaching dataset and report success per fixed task."""
    meta = dataset.meta
    if meta.goal_dim <= 0:
        raise ValueError(f"dataset {meta.env}/{meta.tag} has no goal columns")
    store = TrajStore(dataset)
    env_spec = make_env(meta.env).spec
    state = GCState.init(
        cfg, meta.state_dim, meta.action_dim, meta.goal_dim, seed,
        action_bound=env_spec.action_bound,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    last: dict = {
        "success_flat": float("nan"), "success_hier": float("nan"),
        "per_goal_flat": [], "per_goal_hier": [],
    }

    def run_eval(logger: RunLogger, step: int) -> None:
        eval_seed = int(stream_rng(seed, "eval", step).integers(2**31))
        record: dict = {"kind": "eval", "step": step, "eval_seed": eval_seed,
                        "episodes_per_task": cfg.eval_episodes}
        if cfg.train_policy:
            flat, per_flat = evaluate_goal_policy(
                state.policy, state.twin.enc, meta.env, "flat",
                cfg.eval_episodes, eval_seed, action_bound=env_spec.action_bound,
            )
            hier, per_hier = evaluate_goal_policy(
                state.policy, state.twin.enc, meta.env, "hier",
                cfg.eval_episodes, eval_seed, action_bound=env_spec.action_bound,
            )
            record.update(
                success_flat=flat, success_hier=hier,
                per_goal_flat=per_flat, per_goal_hier=per_hier,
            )
            last.update(record)
        logger.write(record)
        logger.mark(step)
        save_checkpoint(out / f"checkpoint_{step}.ckpt", state.blocks_for_checkpoint())

    with RunLogger(out) as logger:
        run_eval(logger, 0)
        for _ in range(cfg.steps):
            metrics = gc_train_step(state, store)
            step_no = state.step
            if step_no % cfg.log_every == 0 or step_no == cfg.steps:
                logger.write({"kind": "train", **metrics})
            if step_no % cfg.eval_every == 0 or step_no == cfg.steps:
                run_eval(logger, step_no)
        save_checkpoint(out / "checkpoint_final.ckpt", state.blocks_for_checkpoint())
    return GCRunResult(
        success_flat=last["success_flat"],
        success_hier=last["success_hier"],
        per_goal_flat=list(last["per_goal_flat"]),
        per_goal_hier=list(last["per_goal_hier"]),
        steps=cfg.steps,
        out_dir=out,
        log_path=out / "log.jsonl",
        checkpoint_path=out / "checkpoint_final.ckpt",
        state=state,
    )
