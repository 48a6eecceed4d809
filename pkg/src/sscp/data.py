"""Dataset generation, the on-disk transition format, and scoring.

A dataset is a directory with ``meta.json`` (UTF-8, sorted keys) and
``transitions.csv``. The CSV header is

    traj,t,s0..s{n-1},a0..a{m-1},r,sp0..sp{n-1},done[,g0..g{k-1}]

with every float printed at 17 significant digits so values round-trip
bit-exactly; ``done`` marks true terminals (horizon truncation is not a
terminal). Generation is driven entirely by derived seed streams, so the
same (env, tag, n, seed) always produces byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sscp.envs import (
    Env,
    MixtureBandit,
    PointMaze,
    make_env,
    maze_bfs_next,
    maze_cell_center,
    maze_cell_of,
    maze_open_cells,
)
from sscp.seeding import stream_rng

Array = np.ndarray

BEHAVIOR_TAGS = ("expert", "medium", "medium-replay", "random", "play")

FORMAT_VERSION = 1

_REF_EPISODES = 100


@dataclass
class DatasetMeta:
    env: str
    tag: str
    seed: int
    n_transitions: int
    n_trajectories: int
    state_dim: int
    action_dim: int
    goal_dim: int
    score_random: float
    score_expert: float
    behavior_return_mean: float
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetMeta":
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"meta.json has unknown fields: {sorted(unknown)}")
        return cls(**raw)


def normalized_score(meta: DatasetMeta, episode_return: float) -> float:
    """100 * (R - R_random) / (R_expert - R_random)."""
    span = meta.score_expert - meta.score_random
    if span <= 0:
        raise ValueError(
            f"degenerate score references: expert {meta.score_expert} "
            f"<= random {meta.score_random}"
        )
    return 100.0 * (episode_return - meta.score_random) / span


class _Wanderer:
    """Random-waypoint walker for maze play data.

    Picks an open cell, walks the BFS shortest path toward it with actions
    that aim at exact cell centers (so small execution noise is corrected
    rather than accumulated), then picks the next waypoint.
    """

    NOISE = 0.05

    def __init__(self, env: PointMaze):
        self.env = env
        self.waypoint: tuple[int, int] | None = None

    def __call__(self, state: Array, rng: np.random.Generator, progress: float) -> Array:
        pos = np.asarray(state[:2])
        cell = maze_cell_of(self.env.layout, pos)
        if self.waypoint is None or cell == self.waypoint:
            cells = maze_open_cells(self.env.layout)
            self.waypoint = cells[rng.integers(len(cells))]
        nxt = maze_bfs_next(self.env.layout, cell, self.waypoint)
        a = maze_cell_center(nxt) - pos + self.NOISE * rng.standard_normal(2)
        return np.clip(a, -1.0, 1.0)


def behavior_policy(env: Env, tag: str):
    """Callable (state, rng, progress in [0,1]) -> action for a behavior tag."""
    bound = env.spec.action_bound
    dim = env.spec.action_dim

    def random_action(rng: np.random.Generator) -> Array:
        return rng.uniform(-bound, bound, size=dim)

    if tag == "random":
        return lambda s, rng, progress: random_action(rng)
    if tag == "expert":
        return lambda s, rng, progress: env.expert_action(s, rng)
    if tag == "medium":

        def medium(s, rng, progress):
            if rng.random() < 0.2:
                return random_action(rng)
            a = env.medium_action(s, rng) + 0.3 * rng.standard_normal(dim)
            return np.clip(a, -bound, bound)

        return medium
    if tag == "medium-replay":
        # Early data comes from a heavily corrupted policy, late data from a
        # nearly clean one, imitating the replay buffer of an improving agent.
        def replay(s, rng, progress):
            rand_frac = 0.5 + (0.05 - 0.5) * progress
            sigma = 1.2 + (0.1 - 1.2) * progress
            if rng.random() < rand_frac:
                return random_action(rng)
            a = env.expert_action(s, rng) + sigma * rng.standard_normal(dim)
            return np.clip(a, -bound, bound)

        return replay
    if tag == "play":
        if not isinstance(env, PointMaze):
            raise ValueError(f"tag 'play' needs a maze env, got {env.spec.name}")
        return _Wanderer(env)
    raise ValueError(f"unknown behavior tag {tag!r}; choose from {BEHAVIOR_TAGS}")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _rollout_return(env: Env, policy, rng: np.random.Generator, seed: int) -> float:
    s = env.reset(seed=seed)
    total = 0.0
    done = False
    step = 0
    while not done:
        a = policy(s, rng, 0.0)
        s, r, done = env.step(a)
        total += r
        step += 1
    return total


def reference_scores(env_name: str, seed: int) -> tuple[float, float]:
    """Mean returns of the random and expert policies over fixed episodes."""
    out = []
    for tag in ("random", "expert"):
        env = make_env(env_name)
        policy = behavior_policy(env, tag)
        rng = stream_rng(seed, "refs", tag)
        rets = [
            _rollout_return(env, policy, rng, seed=int(stream_rng(seed, "refs", tag, i).integers(2**31)))
            for i in range(_REF_EPISODES)
        ]
        out.append(float(np.mean(rets)))
    return out[0], out[1]


def generate_dataset(
    env_name: str,
    tag: str,
    n_transitions: int,
    seed: int,
    out_dir: str | Path,
    traj_len: int | None = None,
) -> DatasetMeta:
    """Roll the tagged behavior policy and write meta.json + transitions.csv."""
    if n_transitions <= 0:
        raise ValueError("n_transitions must be positive")
    env = make_env(env_name)
    spec = env.spec
    horizon = min(traj_len or spec.horizon, spec.horizon)
    write_goals = spec.goal_dim > 0

    rows: list[tuple] = []
    returns: list[float] = []
    traj_id = 0
    while len(rows) < n_transitions:
        policy = behavior_policy(env, tag)  # fresh per episode (play is stateful)
        ep_seed = int(stream_rng(seed, "episode", traj_id).integers(2**31))
        policy_rng = stream_rng(seed, "policy", traj_id)
        s = env.reset(seed=ep_seed)
        progress = min(len(rows) / n_transitions, 1.0)
        ep_return = 0.0
        for t in range(horizon):
            a = policy(s, policy_rng, progress)
            sp, r, done = env.step(a)
            terminal = env.terminated
            goal = env.goal.copy() if write_goals else None
            rows.append((traj_id, t, s.copy(), np.asarray(a, float), r, sp.copy(), terminal, goal))
            ep_return += r
            s = sp
            if done or len(rows) >= n_transitions:
                break
        returns.append(ep_return)
        traj_id += 1

    score_random, score_expert = reference_scores(env_name, seed)
    meta = DatasetMeta(
        env=env_name,
        tag=tag,
        seed=seed,
        n_transitions=len(rows),
        n_trajectories=traj_id,
        state_dim=spec.state_dim,
        action_dim=spec.action_dim,
        goal_dim=spec.goal_dim if write_goals else 0,
        score_random=score_random,
        score_expert=score_expert,
        behavior_return_mean=float(np.mean(returns)),
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(meta.to_json(), encoding="utf-8")
    header = (
        ["traj", "t"]
        + [f"s{i}" for i in range(spec.state_dim)]
        + [f"a{i}" for i in range(spec.action_dim)]
        + ["r"]
        + [f"sp{i}" for i in range(spec.state_dim)]
        + ["done"]
        + ([f"g{i}" for i in range(spec.goal_dim)] if write_goals else [])
    )
    lines = [",".join(header)]
    for traj, t, s_row, a_row, r, sp_row, terminal, goal in rows:
        parts = [str(traj), str(t)]
        parts += [_fmt(v) for v in s_row]
        parts += [_fmt(v) for v in a_row]
        parts.append(_fmt(r))
        parts += [_fmt(v) for v in sp_row]
        parts.append("1" if terminal else "0")
        if write_goals:
            parts += [_fmt(v) for v in goal]
        lines.append(",".join(parts))
    (out / "transitions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return meta


@dataclass
class Dataset:
    """Columnar in-memory view of one generated dataset."""

    meta: DatasetMeta
    s: Array
    a: Array
    r: Array
    sp: Array
    done: Array
    traj: Array
    t: Array
    g: Array | None = None

    def __len__(self) -> int:
        return self.s.shape[0]

    def traj_slices(self) -> list[tuple[int, int]]:
        """Half-open [start, end) row ranges, one per trajectory."""
        bounds = np.flatnonzero(np.diff(self.traj)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [len(self)]])
        return list(zip(starts.tolist(), ends.tolist()))

    def episode_returns(self) -> Array:
        return np.array([self.r[lo:hi].sum() for lo, hi in self.traj_slices()])


def load_dataset(path: str | Path) -> Dataset:
    """Read and validate a dataset directory."""
    root = Path(path)
    meta = DatasetMeta.from_json((root / "meta.json").read_text(encoding="utf-8"))
    if meta.format_version != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {meta.format_version}")
    text = (root / "transitions.csv").read_text(encoding="utf-8")
    lines = text.strip("\n").split("\n")
    header = lines[0].split(",")
    expected = (
        ["traj", "t"]
        + [f"s{i}" for i in range(meta.state_dim)]
        + [f"a{i}" for i in range(meta.action_dim)]
        + ["r"]
        + [f"sp{i}" for i in range(meta.state_dim)]
        + ["done"]
        + [f"g{i}" for i in range(meta.goal_dim)]
    )
    if header != expected:
        raise ValueError(f"csv header mismatch: got {header}, want {expected}")
    body = lines[1:]
    if len(body) != meta.n_transitions:
        raise ValueError(f"row count {len(body)} != meta n_transitions {meta.n_transitions}")
    table = np.array([[float(v) for v in line.split(",")] for line in body])
    if not np.all(np.isfinite(table)):
        raise ValueError("non-finite values in transitions.csv")
    n, m = meta.state_dim, meta.action_dim
    cols = {}
    cols["traj"] = table[:, 0].astype(np.int64)
    cols["t"] = table[:, 1].astype(np.int64)
    at = 2
    cols["s"] = table[:, at : at + n]
    at += n
    cols["a"] = table[:, at : at + m]
    at += m
    cols["r"] = table[:, at]
    at += 1
    cols["sp"] = table[:, at : at + n]
    at += n
    done = table[:, at]
    at += 1
    if not np.all((done == 0.0) | (done == 1.0)):
        raise ValueError("done column must be 0 or 1")
    cols["done"] = done
    g = table[:, at : at + meta.goal_dim] if meta.goal_dim else None

    traj = cols["traj"]
    t = cols["t"]
    if np.any(np.diff(traj) < 0):
        raise ValueError("trajectory ids must be non-decreasing")
    new_traj = np.concatenate([[True], np.diff(traj) > 0])
    if np.any(t[new_traj] != 0):
        raise ValueError("each trajectory must start at t = 0")
    within = ~new_traj
    if np.any(np.diff(t)[within[1:]] != 1):
        raise ValueError("timesteps must increase by 1 within a trajectory")
    if int(traj[-1]) + 1 != meta.n_trajectories:
        raise ValueError(
            f"trajectory count {int(traj[-1]) + 1} != meta n_trajectories {meta.n_trajectories}"
        )
    return Dataset(meta=meta, g=g, **cols)
