from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from promptdiff.envdata.behavior import behavior_policy
from promptdiff.envdata.env import PointNavEnv, TaskSpec
from promptdiff.prompts import TextPrompt, TrajectoryPrompt, truncate_prompt

PROMPT_NOISE = 0.1
MAX_PROMPT_LEN = 64


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool


@dataclass(eq=False)
class TaskDataset:
    """Offline transitions of one task (stored column-wise) plus its two prompts."""

    task_id: str
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    text_prompt: TextPrompt
    trajectory_prompt: TrajectoryPrompt
    spec: TaskSpec | None = None

    def __post_init__(self):
        n = len(self.rewards)
        if n == 0:
            raise ValueError(f"{self.task_id}: dataset has no transitions")
        self.states = np.asarray(self.states, dtype=np.float64).reshape(n, -1)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(n, -1)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.next_states = np.asarray(self.next_states, dtype=np.float64).reshape(n, -1)
        self.terminals = np.asarray(self.terminals, dtype=bool)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def transitions(self) -> list[Transition]:
        return [Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                           self.next_states[i], bool(self.terminals[i])) for i in range(len(self))]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TaskDataset):
            return NotImplemented
        return (self.task_id == other.task_id
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("states", "actions", "rewards", "next_states", "terminals"))
                and self.text_prompt == other.text_prompt
                and self.trajectory_prompt == other.trajectory_prompt
                and self.spec == other.spec)


def quadrant(goal) -> str:
    ns = "north" if goal[1] >= 0 else "south"
    ew = "east" if goal[0] >= 0 else "west"
    return f"{ns}-{ew}"


def actuator_label(action_scale: float) -> str:
    if action_scale < 0.25:
        return "weak"
    if action_scale < 0.45:
        return "moderate"
    return "strong"


def text_prompt_for(spec: TaskSpec) -> TextPrompt:
    q = quadrant(spec.goal)
    constraints = ["stay inside the arena walls"]
    if spec.has_obstacle:
        constraints.append("steer around the circular obstacle")
    return TextPrompt(
        task_name=spec.task_id,
        objective=f"drive the point agent to the goal in the {q} quadrant and stop there",
        constraints=tuple(constraints),
        attributes=(
            ("goal quadrant", q),
            ("obstacle", "present" if spec.has_obstacle else "absent"),
            ("success radius", f"{spec.success_radius:.2f}"),
            ("actuator", actuator_label(spec.action_scale)),
        ),
    )


def prompt_start(spec: TaskSpec) -> np.ndarray:
    """Canonical start for trajectory prompts: the point opposite the goal."""
    return -np.asarray(spec.goal, dtype=np.float64)


def rollout(spec: TaskSpec, noise_scale: float, rng: np.random.Generator, start=None):
    """One behavior-policy episode as column arrays (s, a, r, s_next, terminal).

    Starts at ``start`` when given, else at a random start position.
    """
    env = PointNavEnv(spec)
    s = env.reset(rng, pos=start)
    cols = ([], [], [], [], [])
    while not env.done:
        a = behavior_policy(spec, s, noise_scale, rng)
        s_next, r, done = env.step(a)
        for col, v in zip(cols, (s, a, r, s_next, done)):
            col.append(v)
        s = s_next
    return tuple(np.asarray(c) for c in cols)


def trajectory_prompt_for(spec: TaskSpec, rng: np.random.Generator,
                          max_len: int = MAX_PROMPT_LEN) -> TrajectoryPrompt:
    s, a, *_ = rollout(spec, PROMPT_NOISE, rng, prompt_start(spec))
    return truncate_prompt(TrajectoryPrompt(s, a), max_len)


def task_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_task_dataset(spec: TaskSpec, episodes: int, noise_scale: float,
                          rng: np.random.Generator, max_prompt_len: int = MAX_PROMPT_LEN) -> TaskDataset:
    if episodes < 1:
        raise ValueError("episodes_per_task must be >= 1")
    parts = [rollout(spec, noise_scale, rng) for _ in range(episodes)]
    cols = [np.concatenate([p[i] for p in parts]) for i in range(5)]
    prompt = trajectory_prompt_for(spec, rng, max_prompt_len)
    return TaskDataset(spec.task_id, *cols, text_prompt=text_prompt_for(spec),
                       trajectory_prompt=prompt, spec=spec)


def generate_dataset(specs, episodes_per_task: int, noise_scale: float, seed: int,
                     max_prompt_len: int = MAX_PROMPT_LEN) -> list[TaskDataset]:
    """One dataset per spec; task i draws from its own stream seeded by (seed, i)."""
    return [generate_task_dataset(spec, episodes_per_task, noise_scale, task_rng(seed, i), max_prompt_len)
            for i, spec in enumerate(specs)]
