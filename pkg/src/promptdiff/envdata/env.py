"""2-D point navigation tasks with inertia, walls and an optional circular obstacle.

State layout: [x, y, vx, vy, goal_x - x, goal_y - y].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from promptdiff.errors import StateError

ARENA = 1.5
VELOCITY_DECAY = 0.8
DT = 0.1
SUCCESS_BONUS = 10.0
STATE_DIM = 6
ACTION_DIM = 2
START_BOX = 1.0
MIN_START_DISTANCE = 0.5


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    goal: tuple[float, float]
    obstacle_center: tuple[float, float] = (0.0, 0.0)
    obstacle_radius: float = 0.0
    action_scale: float = 0.5
    horizon: int = 60
    success_radius: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "goal", tuple(float(g) for g in self.goal))
        object.__setattr__(self, "obstacle_center", tuple(float(c) for c in self.obstacle_center))
        if not self.task_id:
            raise ValueError("task_id must be non-empty")
        if any(abs(g) > 1.0 for g in self.goal):
            raise ValueError(f"goal {self.goal} must lie in [-1, 1]^2")
        if self.obstacle_radius < 0:
            raise ValueError("obstacle_radius must be >= 0")
        if self.action_scale <= 0:
            raise ValueError("action_scale must be > 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.success_radius <= 0:
            raise ValueError("success_radius must be > 0")
        if self.has_obstacle and np.hypot(*np.subtract(self.goal, self.obstacle_center)) <= self.obstacle_radius:
            raise ValueError(f"{self.task_id}: goal lies inside the obstacle")

    @property
    def has_obstacle(self) -> bool:
        return self.obstacle_radius > 0

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "goal": list(self.goal),
                "obstacle_center": list(self.obstacle_center),
                "obstacle_radius": self.obstacle_radius, "action_scale": self.action_scale,
                "horizon": self.horizon, "success_radius": self.success_radius}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(d["task_id"], tuple(d["goal"]), tuple(d.get("obstacle_center", (0.0, 0.0))),
                   float(d.get("obstacle_radius", 0.0)), float(d.get("action_scale", 0.5)),
                   int(d.get("horizon", 60)), float(d.get("success_radius", 0.1)))


def make_state(pos, vel, goal) -> np.ndarray:
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    return np.concatenate([pos, vel, np.asarray(goal) - pos], axis=-1)


def _reflect_walls(pos: np.ndarray, vel: np.ndarray) -> None:
    for bound in (ARENA, -ARENA):
        out = pos > bound if bound > 0 else pos < bound
        pos[out] = 2.0 * bound - pos[out]
        vel[out] = -vel[out]
    np.clip(pos, -ARENA, ARENA, out=pos)


def _reflect_obstacle(pos: np.ndarray, vel: np.ndarray, spec: TaskSpec) -> None:
    if not spec.has_obstacle:
        return
    center = np.asarray(spec.obstacle_center)
    off = pos - center
    dist = np.linalg.norm(off, axis=1)
    inside = dist < spec.obstacle_radius
    if not np.any(inside):
        return
    d = dist[inside]
    n = np.where(d[:, None] > 0, off[inside] / np.maximum(d, 1e-12)[:, None], np.array([1.0, 0.0]))
    pos[inside] = center + n * (2.0 * spec.obstacle_radius - d)[:, None]
    vn = np.sum(vel[inside] * n, axis=1)
    vel[inside] -= 2.0 * np.minimum(vn, 0.0)[:, None] * n


def advance(spec: TaskSpec, pos, vel, action) -> tuple[np.ndarray, np.ndarray]:
    """Pure dynamics on arrays of shape (N, 2)."""
    vel = VELOCITY_DECAY * np.asarray(vel, dtype=np.float64) + spec.action_scale * np.asarray(action)
    pos = np.asarray(pos, dtype=np.float64) + DT * vel
    pos, vel = pos.copy(), vel.copy()
    _reflect_walls(pos, vel)
    _reflect_obstacle(pos, vel, spec)
    _reflect_walls(pos, vel)
    return pos, vel


def reward_and_success(spec: TaskSpec, pos) -> tuple[np.ndarray, np.ndarray]:
    dist = np.linalg.norm(np.asarray(pos) - np.asarray(spec.goal), axis=-1)
    success = dist < spec.success_radius
    return -dist + SUCCESS_BONUS * success, success


def check_action(action) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64)
    if a.shape[-1] != ACTION_DIM or not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1.0 + 1e-9):
        raise ValueError(f"action must be a finite 2-vector in [-1, 1]^2, got {a}")
    return a


def sample_start(spec: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    while True:
        p = rng.uniform(-START_BOX, START_BOX, size=2)
        if np.linalg.norm(p - spec.goal) < MIN_START_DISTANCE:
            continue
        if spec.has_obstacle and np.linalg.norm(p - spec.obstacle_center) < spec.obstacle_radius + 0.05:
            continue
        return p


class PointNavEnv:
    def __init__(self, spec: TaskSpec):
        self.spec = spec
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0
        self.done = False
        self.success = False

    @property
    def state(self) -> np.ndarray:
        return make_state(self.pos, self.vel, self.spec.goal)

    def reset(self, rng: np.random.Generator | None = None, pos=None, vel=None) -> np.ndarray:
        if pos is None:
            pos = sample_start(self.spec, rng if rng is not None else np.random.default_rng())
        self.pos = np.array(pos, dtype=np.float64)
        self.vel = np.zeros(2) if vel is None else np.array(vel, dtype=np.float64)
        self.t = 0
        self.done = False
        self.success = False
        return self.state

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise StateError("episode has ended; call reset()")
        a = check_action(action)
        pos, vel = advance(self.spec, self.pos[None], self.vel[None], a[None])
        self.pos, self.vel = pos[0], vel[0]
        self.t += 1
        reward, success = reward_and_success(self.spec, self.pos)
        self.done = bool(success) or self.t >= self.spec.horizon
        self.success = bool(success)
        return self.state, float(reward), self.done


def env_step(env: PointNavEnv, action) -> tuple[np.ndarray, float, bool]:
    return env.step(action)


def transition(spec: TaskSpec, state, action) -> tuple[np.ndarray, float, bool]:
    """Pure one-step model from a full state vector: (s_next, reward, success)."""
    state = np.asarray(state, dtype=np.float64)
    a = check_action(action)
    pos, vel = advance(spec, state[None, 0:2], state[None, 2:4], a[None])
    reward, success = reward_and_success(spec, pos[0])
    return make_state(pos[0], vel[0], spec.goal), float(reward), bool(success)
