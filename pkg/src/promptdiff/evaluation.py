"""Zero-shot evaluation of trained states and the ablation matrix."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from promptdiff.envdata.dataset import text_prompt_for, trajectory_prompt_for
from promptdiff.envdata.env import ACTION_DIM, STATE_DIM, TaskSpec, advance, make_state, reward_and_success, sample_start
from promptdiff.errors import ConfigError
from promptdiff.policy import PolicyContext, sample_action
from promptdiff.trainer import TrainerConfig, TrainState, build_state, train

VARIANTS = ("full", "no_prompt", "no_text", "no_traj")


@dataclass(frozen=True)
class TaskResult:
    task_id: str
    split: str
    episodes: int
    successes: int
    mean_return: float
    std_success: float = 0.0   # across seeds; 0 for a single seed
    std_return: float = 0.0
    seeds: tuple[int, ...] = ()

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 0 <= self.successes <= self.episodes:
            raise ValueError("successes must lie in [0, episodes]")

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        d["success_rate"] = self.success_rate
        return d


@dataclass(frozen=True)
class EvalReport:
    results: tuple[TaskResult, ...]

    def __getitem__(self, task_id: str) -> TaskResult:
        for r in self.results:
            if r.task_id == task_id:
                return r
        raise KeyError(task_id)

    def mean_success(self, split: str | None = None) -> float:
        rates = [r.success_rate for r in self.results if split is None or r.split == split]
        if not rates:
            raise ValueError(f"no tasks in split {split!r}")
        return float(np.mean(rates))

    def to_records(self) -> list[dict]:
        return [r.to_dict() for r in self.results]


def merge_reports(reports) -> EvalReport:
    """Pool episodes of per-seed reports; std is taken over the per-seed values."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to merge")
    merged = []
    for i, first in enumerate(reports[0].results):
        rows = [rep.results[i] for rep in reports]
        if any(r.task_id != first.task_id for r in rows):
            raise ValueError("reports cover different tasks")
        episodes = sum(r.episodes for r in rows)
        rates = [r.success_rate for r in rows]
        returns = [r.mean_return for r in rows]
        merged.append(TaskResult(
            first.task_id, first.split, episodes, sum(r.successes for r in rows),
            float(sum(r.mean_return * r.episodes for r in rows) / episodes),
            float(np.std(rates)), float(np.std(returns)),
            tuple(s for r in rows for s in r.seeds)))
    return EvalReport(tuple(merged))


def task_stream(seed: int, task_id: str) -> np.random.Generator:
    """Per-task stream that does not depend on the order of the task list."""
    return np.random.default_rng([seed, zlib.crc32(task_id.encode("utf-8"))])


def check_state_dims(state: TrainState) -> None:
    cfg = state.config
    if cfg.state_dim != STATE_DIM or cfg.action_dim != ACTION_DIM:
        raise ConfigError(
            f"checkpoint dims (state_dim={cfg.state_dim}, action_dim={cfg.action_dim}) do not match "
            f"the environment (state_dim={STATE_DIM}, action_dim={ACTION_DIM})")


def run_episodes(state: TrainState, spec: TaskSpec, z_text, z_traj, episodes: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Roll out all episodes in lockstep; returns (success flags, returns)."""
    pos = np.stack([sample_start(spec, rng) for _ in range(episodes)])
    vel = np.zeros_like(pos)
    active = np.ones(episodes, dtype=bool)
    success = np.zeros(episodes, dtype=bool)
    returns = np.zeros(episodes)
    for _ in range(spec.horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        s = make_state(pos[idx], vel[idx], spec.goal)
        a = sample_action(state.policy, state.schedule, PolicyContext(s, z_text, z_traj), rng)
        p, v = advance(spec, pos[idx], vel[idx], a)
        pos[idx], vel[idx] = p, v
        r, hit = reward_and_success(spec, p)
        returns[idx] += r
        success[idx] = hit
        active[idx[hit]] = False
    return success, returns


def evaluate(state: TrainState, specs, episodes: int = 200, seed: int = 0,
             unseen_ids=()) -> EvalReport:
    """Success rate and return per task with freshly built prompts; never mutates ``state``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    check_state_dims(state)
    unseen_ids = set(unseen_ids)
    results = []
    for spec in specs:
        rng = task_stream(seed, spec.task_id)
        traj = trajectory_prompt_for(spec, rng, state.config.max_prompt_len)
        z_text, z_traj = state.embed(text_prompt_for(spec), traj, cache=False)
        success, returns = run_episodes(state, spec, z_text, z_traj, episodes, rng)
        split = "unseen" if spec.task_id in unseen_ids else "seen"
        results.append(TaskResult(spec.task_id, split, episodes, int(success.sum()),
                                  float(returns.mean()), seeds=(seed,)))
    return EvalReport(tuple(results))


def evaluate_seeds(state: TrainState, specs, episodes: int, seeds, unseen_ids=()) -> EvalReport:
    return merge_reports(evaluate(state, specs, episodes, s, unseen_ids) for s in seeds)


# -- report files --------------------------------------------------------------

def format_table(report: EvalReport, title: str = "") -> str:
    header = f"{'task':<24} {'split':<7} {'episodes':>8} {'success':>16} {'return':>18}"
    lines = [title] if title else []
    lines += [header, "-" * len(header)]
    for r in report.results:
        lines.append(f"{r.task_id:<24} {r.split:<7} {r.episodes:>8d} "
                     f"{r.success_rate:>8.3f} ± {r.std_success:<5.3f} "
                     f"{r.mean_return:>9.2f} ± {r.std_return:<6.2f}")
    return "\n".join(lines)


def write_report(report: EvalReport, path, **extra) -> None:
    lines = [json.dumps(dict(extra, **rec), sort_keys=True) for rec in report.to_records()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- ablations -------------------------------------------------------------------

@dataclass(frozen=True)
class AblationTable:
    variants: tuple[str, ...]
    reports: dict  # variant -> EvalReport merged over seeds

    def entries(self) -> list[tuple[str, TaskResult]]:
        return [(v, r) for v in self.variants for r in self.reports[v].results]

    def mean_success(self, variant: str, split: str | None = None) -> float:
        return self.reports[variant].mean_success(split)

    def format(self) -> str:
        return "\n\n".join(format_table(self.reports[v], f"[{v}]") for v in self.variants)

    def write(self, path) -> None:
        lines = [json.dumps(dict(variant=v, **r.to_dict()), sort_keys=True) for v, r in self.entries()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train_variant(base: TrainerConfig, variant: str, seed: int, datasets,
                  text_encoder=None) -> TrainState:
    cfg = dataclasses.replace(base, ablation=variant, seed=seed)
    state = build_state(cfg, text_encoder)
    train(state, datasets)
    return state


def ablation_matrix(base: TrainerConfig, datasets, specs, seeds, episodes: int = 200,
                    variants=VARIANTS, unseen_ids=(), text_encoder=None) -> AblationTable:
    """Train and evaluate every variant on every seed; each run is isolated by its seed."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigError("ablation_matrix needs at least 2 seeds")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown ablation variant {v!r}")
    reports = {}
    for v in variants:
        per_seed = []
        for seed in seeds:
            state = train_variant(base, v, seed, datasets, text_encoder)
            per_seed.append(evaluate(state, specs, episodes, seed, unseen_ids))
        reports[v] = merge_reports(per_seed)
    return AblationTable(tuple(variants), reports)
