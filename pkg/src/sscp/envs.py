"""Toy continuous-control environments with exactly reproducible dynamics.

Three families:

* ``mixture_bandit``: one-step problem whose reward surface is the max over
  eight Gaussian bumps on a ring; the action distribution that matters is
  multimodal, which is what the one-shot sampler has to reproduce.
* ``point_reach``: double-integrator point mass pushed toward the origin by
  bounded forces, dense negative-distance reward.
* ``point_maze``: continuous position in a small wall grid, sparse -1
  reward until the goal ball is reached; used goal-conditioned.

All dynamics are deterministic given the action sequence; the only
randomness is the reset draw, controlled by an explicit seed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from sscp.seeding import stream_rng

Array = np.ndarray


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int
    action_bound: float = 1.0
    goal_dim: int = 0


class Env:
    """Base: seeded resets, bounded actions, horizon truncation."""

    spec: EnvSpec

    def __init__(self, seed: int = 0):
        self._reset_rng = stream_rng(seed, self.spec.name, "resets")
        self._t = 0
        self._done = True
        self.terminated = False  # true terminal state, as opposed to truncation

    def _episode_rng(self, seed: int | None) -> np.random.Generator:
        if seed is None:
            return self._reset_rng
        return np.random.default_rng(seed)

    def reset(self, seed: int | None = None) -> Array:
        raise NotImplementedError

    def step(self, action: Array) -> tuple[Array, float, bool]:
        raise NotImplementedError

    def _clip_action(self, action: Array) -> Array:
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        return np.clip(a, -self.spec.action_bound, self.spec.action_bound)

    def _require_live(self) -> None:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")

    def expert_action(self, state: Array, rng: np.random.Generator) -> Array:
        raise NotImplementedError

    def medium_action(self, state: Array, rng: np.random.Generator) -> Array:
        """Base controller for mid-quality data; defaults to the expert."""
        return self.expert_action(state, rng)


class MixtureBandit(Env):
    """Stateless one-step task: reward is the best of eight Gaussian bumps."""

    N_MODES = 8
    RING_RADIUS = 0.7
    BUMP_SIGMA = 0.1
    EXPERT_NOISE = 0.1

    spec = EnvSpec(name="mixture_bandit", state_dim=2, action_dim=2, horizon=1)

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        angles = 2.0 * np.pi * np.arange(self.N_MODES) / self.N_MODES
        self.centers = self.RING_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def reward(self, action: Array) -> float:
        d2 = np.sum((self.centers - np.asarray(action)) ** 2, axis=1)
        return float(np.max(np.exp(-d2 / (2.0 * self.BUMP_SIGMA**2))))

    def reset(self, seed: int | None = None) -> Array:
        self._episode_rng(seed)  # keeps the stream position consistent across tags
        self._t = 0
        self._done = False
        self.terminated = False
        return np.zeros(2)

    def step(self, action: Array) -> tuple[Array, float, bool]:
        self._require_live()
        a = self._clip_action(action)
        self._t = 1
        self._done = True
        self.terminated = True
        return np.zeros(2), self.reward(a), True

    def expert_action(self, state: Array, rng: np.random.Generator) -> Array:
        mode = rng.integers(self.N_MODES)
        a = self.centers[mode] + self.EXPERT_NOISE * rng.standard_normal(2)
        return np.clip(a, -1.0, 1.0)


class PointReach(Env):
    """Double integrator: state (px, py, vx, vy), action is a bounded force.

    pos' = pos + vel dt + a dt^2 / 2, vel' = vel + a dt, reward -|pos'|.
    """

    DT = 0.1
    START_RANGE = 2.0
    EXPERT_GAIN = 4.0
    # Deliberately sluggish: returns land well between random and expert,
    # leaving visible headroom above datasets built on this controller.
    MEDIUM_GAIN = 0.25

    spec = EnvSpec(name="point_reach", state_dim=4, action_dim=2, horizon=100)

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)

    def reset(self, seed: int | None = None) -> Array:
        rng = self._episode_rng(seed)
        self.pos = rng.uniform(-self.START_RANGE, self.START_RANGE, size=2)
        self.vel = np.zeros(2)
        self._t = 0
        self._done = False
        self.terminated = False
        return self._state()

    def _state(self) -> Array:
        return np.concatenate([self.pos, self.vel])

    def step(self, action: Array) -> tuple[Array, float, bool]:
        self._require_live()
        a = self._clip_action(action)
        self.pos = self.pos + self.vel * self.DT + 0.5 * a * self.DT**2
        self.vel = self.vel + a * self.DT
        self._t += 1
        reward = -float(np.linalg.norm(self.pos))
        self._done = self._t >= self.spec.horizon
        self.terminated = False  # time limit only, never a true terminal
        return self._state(), reward, self._done

    def expert_action(self, state: Array, rng: np.random.Generator) -> Array:
        pos, vel = np.asarray(state[:2]), np.asarray(state[2:])
        return np.clip(-self.EXPERT_GAIN * (pos + vel), -1.0, 1.0)

    def medium_action(self, state: Array, rng: np.random.Generator) -> Array:
        pos, vel = np.asarray(state[:2]), np.asarray(state[2:])
        return np.clip(-self.MEDIUM_GAIN * (pos + vel), -1.0, 1.0)


DEFAULT_MAZE = (
    ".#...",
    ".#.#.",
    ".#.#.",
    ".#.#.",
    "...#.",
)

# Fixed evaluation tasks as ((start_row, start_col), (goal_row, goal_col)).
MAZE_TASKS = (
    ((0, 0), (4, 0)),
    ((0, 0), (0, 4)),
    ((4, 4), (0, 0)),
    ((2, 2), (4, 0)),
    ((0, 2), (4, 4)),
)


def maze_open_cells(layout: tuple[str, ...]) -> list[tuple[int, int]]:
    return [
        (r, c)
        for r, row in enumerate(layout)
        for c, ch in enumerate(row)
        if ch == "."
    ]


def maze_cell_center(cell: tuple[int, int]) -> Array:
    r, c = cell
    return np.array([c + 0.5, r + 0.5])


def maze_cell_of(layout: tuple[str, ...], pos: Array) -> tuple[int, int]:
    c = int(np.clip(np.floor(pos[0]), 0, len(layout[0]) - 1))
    r = int(np.clip(np.floor(pos[1]), 0, len(layout) - 1))
    return r, c


def maze_bfs_distances(layout: tuple[str, ...], goal: tuple[int, int]) -> dict[tuple[int, int], int]:
    """4-neighbor shortest-path step counts from every open cell to ``goal``."""
    if layout[goal[0]][goal[1]] != ".":
        raise ValueError(f"goal cell {goal} is a wall")
    dist = {goal: 0}
    queue = deque([goal])
    n_rows, n_cols = len(layout), len(layout[0])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < n_rows and 0 <= nc < n_cols and layout[nr][nc] == ".":
                if (nr, nc) not in dist:
                    dist[(nr, nc)] = dist[(r, c)] + 1
                    queue.append((nr, nc))
    return dist


def maze_bfs_next(
    layout: tuple[str, ...], cell: tuple[int, int], goal: tuple[int, int]
) -> tuple[int, int]:
    """Neighbor of ``cell`` that reduces BFS distance to ``goal``; ties go in
    the fixed neighbor order, so paths are deterministic."""
    if cell == goal:
        return cell
    dist = maze_bfs_distances(layout, goal)
    if cell not in dist:
        raise ValueError(f"no path from {cell} to {goal}")
    r, c = cell
    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nxt = (r + dr, c + dc)
        if nxt in dist and dist[nxt] == dist[cell] - 1:
            return nxt
    raise AssertionError("BFS distance field is inconsistent")


class PointMaze(Env):
    """Continuous point in a wall grid. Sparse goal-reaching reward.

    Per-axis motion: a displacement axis is applied only if the destination
    cell is open, so walls block movement without any sliding physics. The
    action bound of 1 and unit cell size keep every move within one cell
    per axis. Reward is 0 and the episode terminates once the position is
    inside the goal ball, otherwise the reward is -1.
    """

    GOAL_TOL = 0.1

    spec = EnvSpec(
        name="point_maze", state_dim=2, action_dim=2, horizon=100, goal_dim=2
    )

    def __init__(self, seed: int = 0, layout: tuple[str, ...] = DEFAULT_MAZE):
        super().__init__(seed)
        if len({len(row) for row in layout}) != 1:
            raise ValueError("maze rows must have equal length")
        self.layout = tuple(layout)
        self.pos = np.zeros(2)
        self.goal = np.zeros(2)

    def reset(
        self,
        seed: int | None = None,
        start_cell: tuple[int, int] | None = None,
        goal_cell: tuple[int, int] | None = None,
    ) -> Array:
        rng = self._episode_rng(seed)
        cells = maze_open_cells(self.layout)
        if start_cell is None:
            start_cell = cells[rng.integers(len(cells))]
        if goal_cell is None:
            goal_cell = cells[rng.integers(len(cells))]
        if self.layout[start_cell[0]][start_cell[1]] != ".":
            raise ValueError(f"start cell {start_cell} is a wall")
        self.pos = maze_cell_center(start_cell)
        self.goal_cell = goal_cell
        self.goal = maze_cell_center(goal_cell)
        self._t = 0
        self._done = False
        self.terminated = False
        return self.pos.copy()

    def _blocked(self, pos: Array) -> bool:
        if not (0.0 <= pos[0] < len(self.layout[0]) and 0.0 <= pos[1] < len(self.layout)):
            return True
        r, c = maze_cell_of(self.layout, pos)
        return self.layout[r][c] != "."

    def step(self, action: Array) -> tuple[Array, float, bool]:
        self._require_live()
        a = self._clip_action(action)
        trial = self.pos.copy()
        trial[0] += a[0]
        if self._blocked(trial):
            trial[0] = self.pos[0]
        trial[1] += a[1]
        if self._blocked(trial):
            trial[1] = self.pos[1]
        self.pos = trial
        self._t += 1
        reached = bool(np.linalg.norm(self.pos - self.goal) <= self.GOAL_TOL)
        reward = 0.0 if reached else -1.0
        self.terminated = reached
        self._done = reached or self._t >= self.spec.horizon
        return self.pos.copy(), reward, self._done

    def expert_action(self, state: Array, rng: np.random.Generator) -> Array:
        pos = np.asarray(state[:2])
        cell = maze_cell_of(self.layout, pos)
        nxt = maze_bfs_next(self.layout, cell, self.goal_cell)
        target = self.goal if nxt == self.goal_cell else maze_cell_center(nxt)
        return np.clip(target - pos, -1.0, 1.0)


_ENVS = {
    "mixture_bandit": MixtureBandit,
    "point_reach": PointReach,
    "point_maze": PointMaze,
}


def make_env(name: str, seed: int = 0) -> Env:
    if name not in _ENVS:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(_ENVS)}")
    return _ENVS[name](seed=seed)


def env_names() -> tuple[str, ...]:
    return tuple(sorted(_ENVS))
