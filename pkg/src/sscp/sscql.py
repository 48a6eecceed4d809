"""Offline and online actor-critic training of one-shot completion policies.

The actor is a completion network; its training loss is

    alpha_flow * velocity regression
  + alpha_completion * endpoint regression (or the bootstrap variant)
  - mean(Q(s, a_hat)) / mean|Q|,

where a_hat is the single-jump endpoint built from the same interpolant
batch, so the distribution-matching terms anchor the policy to the data
while the normalized Q term tilts it toward value. Critics are a twin pair
trained on one-step targets bootstrapped through the target actor's
one-shot samples. Policy extraction never runs an ODE solver.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from sscp.data import Dataset, DatasetMeta, normalized_score, reference_scores
from sscp.envs import make_env
from sscp.flow import (
    CompletionArch,
    CompletionModel,
    FlowBatch,
    bootstrap_shortcut_loss,
    completion_endpoint,
    completion_forward,
    flow_loss,
    interpolate,
    make_flow_batch,
    sample_euler,
    sample_one_step,
)
from sscp.logio import RunLogger
from sscp.nn import autodiff as ad
from sscp.nn.autodiff import Tensor
from sscp.nn.net import mlp_forward
from sscp.nn.optim import AdamState, adam_step, soft_update
from sscp.nn.params import LiveParams, ParamBlock, init_mlp, save_checkpoint
from sscp.seeding import stream_rng

Array = np.ndarray

Q_NORM_EPS = 1e-8


class TrainingError(RuntimeError):
    """Raised when training hits non-finite numbers; carries diagnostics."""


@dataclass
class TrainConfig:
    """Hyperparameters for behavior cloning and actor-critic training."""

    widths: tuple[int, ...] = (256, 256)
    time_dim: int = 64
    alpha_flow: float = 1.0
    alpha_completion: float = 1.0
    q_term: bool = True
    completion_variant: str = "interpolant"  # or "bootstrap"
    bootstrap_steps: tuple[float, ...] = (0.5, 0.25, 0.125)
    gamma: float = 0.99
    lr: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch: int = 256
    steps: int = 10_000
    online_steps: int = 0
    tau_critic: float = 0.005
    tau_actor: float = 0.0005
    target_policy_for_critic: bool = True  # bootstrap through the target actor
    eval_every: int = 1000
    eval_episodes: int = 10
    log_every: int = 100
    explore_start: float = 1.0
    explore_end: float = 0.05
    explore_frac: float = 0.2
    buffer_capacity: int = 0  # 0 = sized automatically

    def __post_init__(self) -> None:
        if self.completion_variant not in ("interpolant", "bootstrap"):
            raise ValueError(f"unknown completion_variant {self.completion_variant!r}")


@dataclass
class TransitionBatch:
    s: Array
    a: Array
    r: Array
    sp: Array
    done: Array


class TransitionStore:
    """Columnar ring buffer of transitions with uniform sampling."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.sp = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self._size = 0
        self._cursor = 0

    @classmethod
    def from_dataset(cls, ds: Dataset, extra_capacity: int = 0) -> "TransitionStore":
        store = cls(ds.s.shape[1], ds.a.shape[1], len(ds) + extra_capacity)
        n = len(ds)
        store.s[:n] = ds.s
        store.a[:n] = ds.a
        store.r[:n] = ds.r
        store.sp[:n] = ds.sp
        store.done[:n] = ds.done
        store._size = n
        store._cursor = n % store.capacity
        return store

    def __len__(self) -> int:
        return self._size

    def append(self, s: Array, a: Array, r: float, sp: Array, done: float) -> None:
        i = self._cursor
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.sp[i] = sp
        self.done[i] = done
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int) -> TransitionBatch:
        if self._size == 0:
            raise ValueError("cannot sample from an empty store")
        idx = rng.integers(self._size, size=n)
        return TransitionBatch(
            s=self.s[idx], a=self.a[idx], r=self.r[idx], sp=self.sp[idx], done=self.done[idx]
        )


@dataclass(frozen=True)
class CriticArch:
    state_dim: int
    action_dim: int
    widths: tuple[int, ...] = (256, 256)


class CriticPair:
    """Twin Q networks; each is an MLP on [s, a] with a scalar head."""

    def __init__(self, arch: CriticArch, q1: ParamBlock, q2: ParamBlock):
        self.arch = arch
        self.q1 = q1
        self.q2 = q2

    @classmethod
    def init(cls, arch: CriticArch, seed: int) -> "CriticPair":
        sizes = (arch.state_dim + arch.action_dim, *arch.widths, 1)
        blocks = []
        for tag in ("q1", "q2"):
            block = ParamBlock()
            init_mlp(block, "q", sizes, master_seed=int(stream_rng(seed, tag).integers(2**31)))
            blocks.append(block)
        return cls(arch, blocks[0], blocks[1])


def critic_forward(live: LiveParams, s: Array, a) -> Tensor:
    """Q(s, a) column; ``a`` may be a Tensor to pass gradient into the action."""
    a_t = a if isinstance(a, Tensor) else Tensor(np.atleast_2d(a))
    joined = ad.concat([Tensor(np.atleast_2d(s)), a_t], axis=-1)
    return mlp_forward(live, "q", joined)


def critic_value(block: ParamBlock, s: Array, a: Array) -> Array:
    return critic_forward(LiveParams(block, trainable=False), s, a).data[:, 0]


def critic_target(
    actor_model: CompletionModel,
    q1_target: ParamBlock,
    q2_target: ParamBlock,
    batch: TransitionBatch,
    gamma: float,
    rng: np.random.Generator,
    action_bound: float,
) -> Array:
    """y = r + gamma (1 - done) min_i Q_i'(s', pi(s')), all detached."""
    a_next = sample_one_step(actor_model, batch.sp, rng, clip_to=action_bound)
    q1 = critic_value(q1_target, batch.sp, a_next)
    q2 = critic_value(q2_target, batch.sp, a_next)
    return batch.r + gamma * (1.0 - batch.done) * np.minimum(q1, q2)


def critic_loss(
    live_q1: LiveParams, live_q2: LiveParams, s: Array, a: Array, y: Array
) -> Tensor:
    """Sum over both critics of the mean squared Bellman error."""
    target = Tensor(y[:, None])
    l1 = ad.tmean(ad.square(ad.sub(critic_forward(live_q1, s, a), target)))
    l2 = ad.tmean(ad.square(ad.sub(critic_forward(live_q2, s, a), target)))
    return ad.add(l1, l2)


def actor_q_loss(
    endpoint: Tensor,
    s: Array,
    q1: ParamBlock,
    q2: ParamBlock,
    normalizer: float | None = None,
) -> tuple[Tensor, float]:
    """Normalized value-seeking term -mean((Q1 + Q2) / 2) / mean|Q|.

    The critics enter as frozen constants, so the gradient reaches only the
    actor through the endpoint. The normalizer is computed from the same
    batch and detached; pass ``normalizer`` explicitly to pin it (finite
    difference checks need that).
    """
    qv1 = critic_forward(LiveParams(q1, trainable=False), s, endpoint)
    qv2 = critic_forward(LiveParams(q2, trainable=False), s, endpoint)
    if normalizer is None:
        normalizer = max(
            float(np.mean(np.abs(np.concatenate([qv1.data, qv2.data])))), Q_NORM_EPS
        )
    loss = ad.mul(ad.tmean(ad.add(qv1, qv2)), -0.5 / normalizer)
    return loss, normalizer


def _bootstrap_step_sizes(cfg: TrainConfig, rng: np.random.Generator, n: int) -> Array:
    choices = np.asarray(cfg.bootstrap_steps, dtype=np.float64)
    return choices[rng.integers(len(choices), size=n)]


def actor_loss(
    live: LiveParams,
    arch: CompletionArch,
    fb: FlowBatch,
    cfg: TrainConfig,
    q1: ParamBlock | None = None,
    q2: ParamBlock | None = None,
    bootstrap_d: Array | None = None,
    q_normalizer: float | None = None,
) -> tuple[Tensor, dict]:
    """Combined actor objective; returns the scalar and per-term diagnostics."""
    metrics: dict = {}
    l_flow = flow_loss(live, arch, fb)
    metrics["loss_flow"] = l_flow.item()
    total = ad.mul(l_flow, cfg.alpha_flow)

    if cfg.completion_variant == "interpolant":
        endpoint = completion_endpoint(live, arch, fb)
        diff = ad.sub(endpoint, Tensor(fb.a))
        l_comp = ad.tmean(ad.tsum(ad.square(diff), axis=1))
    else:
        if bootstrap_d is None:
            raise ValueError("bootstrap variant needs step sizes")
        tau_b = fb.tau * (1.0 - bootstrap_d)
        fb_b = FlowBatch(
            s=fb.s, a=fb.a, z=fb.z, tau=tau_b, x_tau=interpolate(fb.z, fb.a, tau_b)
        )
        l_comp = bootstrap_shortcut_loss(live, arch, fb_b, bootstrap_d)
        # the endpoint graph feeds only the Q term; skip it in pure cloning
        endpoint = completion_endpoint(live, arch, fb) if cfg.q_term else None
    metrics["loss_completion"] = l_comp.item()
    total = ad.add(total, ad.mul(l_comp, cfg.alpha_completion))

    if cfg.q_term:
        if q1 is None or q2 is None:
            raise ValueError("q_term requires critic blocks")
        l_q, normalizer = actor_q_loss(endpoint, fb.s, q1, q2, normalizer=q_normalizer)
        metrics["loss_q"] = l_q.item()
        metrics["mean_abs_q"] = normalizer
        total = ad.add(total, l_q)
    return total, metrics


@dataclass
class SSCQLState:
    """Everything that evolves during training."""

    cfg: TrainConfig
    arch: CompletionArch
    actor: CompletionModel
    actor_target: ParamBlock
    critics: CriticPair | None
    q1_target: ParamBlock | None
    q2_target: ParamBlock | None
    opt_actor: AdamState
    opt_q1: AdamState | None
    opt_q2: AdamState | None
    rng: np.random.Generator
    action_bound: float
    step: int = 0

    @classmethod
    def init(
        cls, cfg: TrainConfig, state_dim: int, action_dim: int, seed: int,
        action_bound: float = 1.0,
    ) -> "SSCQLState":
        arch = CompletionArch(
            state_dim=state_dim, action_dim=action_dim,
            widths=tuple(cfg.widths), time_dim=cfg.time_dim,
        )
        actor = CompletionModel.init(arch, seed=int(stream_rng(seed, "actor").integers(2**31)))
        critics = None
        q1_t = q2_t = None
        opt_q1 = opt_q2 = None
        if cfg.q_term:
            critics = CriticPair.init(
                CriticArch(state_dim, action_dim, tuple(cfg.widths)),
                seed=int(stream_rng(seed, "critics").integers(2**31)),
            )
            q1_t, q2_t = critics.q1.copy(), critics.q2.copy()
            opt_q1 = AdamState.for_block(critics.q1)
            opt_q2 = AdamState.for_block(critics.q2)
        return cls(
            cfg=cfg,
            arch=arch,
            actor=actor,
            actor_target=actor.params.copy(),
            critics=critics,
            q1_target=q1_t,
            q2_target=q2_t,
            opt_actor=AdamState.for_block(actor.params),
            opt_q1=opt_q1,
            opt_q2=opt_q2,
            rng=stream_rng(seed, "train"),
            action_bound=action_bound,
        )

    def target_actor_model(self) -> CompletionModel:
        return CompletionModel(self.arch, self.actor_target)

    def blocks_for_checkpoint(self) -> dict[str, ParamBlock]:
        blocks = {"actor": self.actor.params, "actor_target": self.actor_target}
        if self.critics is not None:
            blocks.update(
                q1=self.critics.q1, q2=self.critics.q2,
                q1_target=self.q1_target, q2_target=self.q2_target,
            )
        return blocks


def train_step(state: SSCQLState, batch: TransitionBatch) -> dict:
    """One gradient step on critics (if enabled) and the actor, plus blends."""
    cfg = state.cfg
    metrics: dict = {}

    if cfg.q_term:
        assert state.critics is not None
        actor_for_target = (
            state.target_actor_model() if cfg.target_policy_for_critic else state.actor
        )
        y = critic_target(
            actor_for_target, state.q1_target, state.q2_target, batch,
            cfg.gamma, state.rng, state.action_bound,
        )
        live1 = LiveParams(state.critics.q1)
        live2 = LiveParams(state.critics.q2)
        c_loss = critic_loss(live1, live2, batch.s, batch.a, y)
        c_loss.backward()
        adam_step(state.critics.q1, live1.grads(), state.opt_q1, cfg.lr,
                  cfg.adam_beta1, cfg.adam_beta2)
        adam_step(state.critics.q2, live2.grads(), state.opt_q2, cfg.lr,
                  cfg.adam_beta1, cfg.adam_beta2)
        metrics["critic_loss"] = c_loss.item()

    fb = make_flow_batch(state.rng, batch.s, batch.a)
    bootstrap_d = None
    if cfg.completion_variant == "bootstrap":
        bootstrap_d = _bootstrap_step_sizes(cfg, state.rng, batch.s.shape[0])
    live_actor = state.actor.bind(trainable=True)
    q1 = state.critics.q1 if cfg.q_term else None
    q2 = state.critics.q2 if cfg.q_term else None
    a_loss, a_metrics = actor_loss(
        live_actor, state.arch, fb, cfg, q1=q1, q2=q2, bootstrap_d=bootstrap_d
    )
    a_loss.backward()
    adam_step(state.actor.params, live_actor.grads(), state.opt_actor, cfg.lr,
              cfg.adam_beta1, cfg.adam_beta2)
    metrics.update(a_metrics)

    if cfg.q_term:
        soft_update(state.q1_target, state.critics.q1, cfg.tau_critic)
        soft_update(state.q2_target, state.critics.q2, cfg.tau_critic)
    soft_update(state.actor_target, state.actor.params, cfg.tau_actor)

    state.step += 1
    metrics["step"] = state.step
    bad = [k for k, v in metrics.items() if isinstance(v, float) and not np.isfinite(v)]
    if bad:
        raise TrainingError(f"non-finite metrics at step {state.step}: {bad} ({metrics})")
    return metrics


def evaluate_policy(
    model: CompletionModel,
    env_name: str,
    n_episodes: int,
    eval_seed: int,
    action_bound: float = 1.0,
) -> tuple[float, list[float]]:
    """Mean undiscounted return of the one-step sampler over seeded episodes."""
    env = make_env(env_name)
    returns = []
    for ep in range(n_episodes):
        ep_seed = int(stream_rng(eval_seed, "episode", ep).integers(2**31))
        action_rng = stream_rng(eval_seed, "actions", ep)
        s = env.reset(seed=ep_seed)
        done = False
        total = 0.0
        while not done:
            a = sample_one_step(model, s[None, :], action_rng, clip_to=action_bound)[0]
            s, r, done = env.step(a)
            total += r
        returns.append(total)
    return float(np.mean(returns)), returns


def exploration_epsilon(cfg: TrainConfig, k: int, n_online: int) -> float:
    """Linear decay from explore_start to explore_end over explore_frac of steps."""
    ramp = cfg.explore_frac * n_online
    if ramp <= 0 or k >= ramp:
        return cfg.explore_end
    return cfg.explore_start + (cfg.explore_end - cfg.explore_start) * (k / ramp)


@dataclass
class RunResult:
    final_return: float
    final_score: float
    steps: int
    out_dir: Path
    log_path: Path
    checkpoint_path: Path


class _EvalLoop:
    """Shared periodic evaluation + checkpoint + logging."""

    def __init__(
        self, state: SSCQLState, env_name: str, meta: DatasetMeta | None,
        refs: tuple[float, float], seed: int, out: Path, logger: RunLogger,
    ):
        self.state = state
        self.env_name = env_name
        self.meta = meta
        self.refs = refs
        self.seed = seed
        self.out = out
        self.logger = logger
        self.last: tuple[float, float] = (np.nan, np.nan)

    def score_of(self, ret: float) -> float:
        if self.meta is not None:
            return normalized_score(self.meta, ret)
        rand, expert = self.refs
        span = expert - rand
        if span <= 0:
            raise TrainingError(f"degenerate reference returns ({rand}, {expert})")
        return 100.0 * (ret - rand) / span

    def run(self, step: int) -> None:
        eval_seed = int(stream_rng(self.seed, "eval", step).integers(2**31))
        ret, _ = evaluate_policy(
            self.state.actor, self.env_name, self.state.cfg.eval_episodes, eval_seed,
            self.state.action_bound,
        )
        score = self.score_of(ret)
        self.logger.write(
            {
                "kind": "eval", "step": step, "eval_seed": eval_seed,
                "episodes": self.state.cfg.eval_episodes,
                "return_mean": ret, "score": score,
            }
        )
        self.logger.mark(step)
        save_checkpoint(self.out / f"checkpoint_{step}.ckpt",
                        self.state.blocks_for_checkpoint())
        self.last = (ret, score)


def _train_loop(
    state: SSCQLState,
    store: TransitionStore,
    env_name: str,
    meta: DatasetMeta | None,
    seed: int,
    out_dir: str | Path,
    collect_env=None,
) -> RunResult:
    """Offline steps followed by optional online steps with collection."""
    cfg = state.cfg
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    refs = (np.nan, np.nan)
    if meta is None:
        refs = reference_scores(env_name, seed)
    total_steps = cfg.steps + cfg.online_steps

    with RunLogger(out) as logger:
        loop = _EvalLoop(state, env_name, meta, refs, seed, out, logger)
        loop.run(0)

        collect_state = None
        episode_idx = 0
        if collect_env is not None:
            ep_seed = int(stream_rng(seed, "collect", episode_idx).integers(2**31))
            collect_state = collect_env.reset(seed=ep_seed)
        collect_rng = stream_rng(seed, "collect_actions")

        for k in range(total_steps):
            online_k = k - cfg.steps
            if online_k >= 0 and collect_env is not None:
                eps = exploration_epsilon(cfg, online_k, cfg.online_steps)
                if collect_rng.random() < eps:
                    a = collect_rng.uniform(
                        -state.action_bound, state.action_bound, size=state.arch.action_dim
                    )
                else:
                    a = sample_one_step(
                        state.actor, collect_state[None, :], collect_rng,
                        clip_to=state.action_bound,
                    )[0]
                sp, r, done = collect_env.step(a)
                store.append(collect_state, a, r, sp, float(collect_env.terminated))
                collect_state = sp
                if done:
                    episode_idx += 1
                    ep_seed = int(stream_rng(seed, "collect", episode_idx).integers(2**31))
                    collect_state = collect_env.reset(seed=ep_seed)

            batch = store.sample(state.rng, cfg.batch)
            metrics = train_step(state, batch)
            step_no = state.step
            if step_no % cfg.log_every == 0 or step_no == total_steps:
                logger.write({"kind": "train", **metrics})
            if step_no % cfg.eval_every == 0 or step_no == total_steps:
                loop.run(step_no)

        final_ret, final_score = loop.last
        save_checkpoint(out / "checkpoint_final.ckpt", state.blocks_for_checkpoint())
    return RunResult(
        final_return=final_ret,
        final_score=final_score,
        steps=total_steps,
        out_dir=out,
        log_path=out / "log.jsonl",
        checkpoint_path=out / "checkpoint_final.ckpt",
    )


def run_offline(
    dataset: Dataset, cfg: TrainConfig, seed: int, out_dir: str | Path
) -> RunResult:
    """Train on a fixed dataset; also the behavior-cloning path when q_term=False."""
    cfg = replace(cfg, online_steps=0)
    store = TransitionStore.from_dataset(dataset)
    state = SSCQLState.init(
        cfg, dataset.s.shape[1], dataset.a.shape[1], seed,
        action_bound=make_env(dataset.meta.env).spec.action_bound,
    )
    return _train_loop(state, store, dataset.meta.env, dataset.meta, seed, out_dir)


def run_offline_to_online(
    dataset: Dataset, cfg: TrainConfig, seed: int, out_dir: str | Path
) -> RunResult:
    """Offline phase, then keep training while appending fresh transitions."""
    if cfg.online_steps <= 0:
        raise ValueError("run_offline_to_online needs online_steps > 0")
    env = make_env(dataset.meta.env)
    capacity = cfg.buffer_capacity or (len(dataset) + cfg.online_steps)
    store = TransitionStore.from_dataset(dataset, extra_capacity=max(capacity - len(dataset), 0))
    state = SSCQLState.init(
        cfg, dataset.s.shape[1], dataset.a.shape[1], seed,
        action_bound=env.spec.action_bound,
    )
    return _train_loop(
        state, store, dataset.meta.env, dataset.meta, seed, out_dir, collect_env=env
    )


def run_online(env_name: str, cfg: TrainConfig, seed: int, out_dir: str | Path) -> RunResult:
    """Learn from scratch; the buffer starts empty and grows one step at a time."""
    if cfg.online_steps <= 0:
        raise ValueError("run_online needs online_steps > 0")
    cfg = replace(cfg, steps=0)
    env = make_env(env_name)
    spec = env.spec
    capacity = cfg.buffer_capacity or cfg.online_steps
    store = TransitionStore(spec.state_dim, spec.action_dim, capacity)
    state = SSCQLState.init(cfg, spec.state_dim, spec.action_dim, seed,
                            action_bound=spec.action_bound)
    return _train_loop(state, store, env_name, None, seed, out_dir, collect_env=env)


def bench_inference(
    model: CompletionModel,
    states: Array,
    n_actions: int,
    euler_steps: int = 32,
    seed: int = 0,
) -> dict:
    """Wall-clock comparison of one-shot sampling vs Euler integration.

    Actions are produced one at a time (batch of one) to reflect control-loop
    deployment rather than vectorized throughput.
    """
    states = np.atleast_2d(states)
    rng = np.random.default_rng(seed)

    def time_sampler(fn) -> float:
        t0 = time.perf_counter()
        for i in range(n_actions):
            fn(states[i % states.shape[0]][None, :])
        return time.perf_counter() - t0

    one = time_sampler(lambda s: sample_one_step(model, s, rng))
    euler = time_sampler(lambda s: sample_euler(model, s, rng, n_steps=euler_steps))
    return {
        "n_actions": n_actions,
        "euler_steps": euler_steps,
        "one_step_total_s": one,
        "euler_total_s": euler,
        "one_step_per_action_s": one / n_actions,
        "euler_per_action_s": euler / n_actions,
        "speedup": euler / one if one > 0 else float("inf"),
    }
