"""Default seen/unseen task split and task-list files."""

from __future__ import annotations

import json
from pathlib import Path

from promptdiff.envdata.env import TaskSpec
from promptdiff.errors import LoadError

# Seen goals cover three quadrants; held-out goals sit in the fourth.
SEEN_TASKS = (
    TaskSpec("reach-ne-weak", (0.7, 0.6), action_scale=0.15),
    TaskSpec("reach-ne-strong", (0.5, 0.8), action_scale=0.9),
    TaskSpec("reach-nw-weak", (-0.6, 0.7), action_scale=0.15),
    TaskSpec("reach-nw-strong", (-0.8, 0.5), action_scale=0.9),
    TaskSpec("reach-se-weak", (0.6, -0.7), action_scale=0.15),
    TaskSpec("reach-se-strong", (0.8, -0.5), action_scale=0.9),
)
UNSEEN_TASKS = (
    TaskSpec("reach-sw-weak", (-0.7, -0.6), action_scale=0.15),
    TaskSpec("reach-sw-strong", (-0.5, -0.8), action_scale=0.9),
    TaskSpec("reach-sw-strong-far", (-0.8, -0.3), action_scale=0.9),
)


def default_benchmark() -> tuple[list[TaskSpec], list[TaskSpec]]:
    return list(SEEN_TASKS), list(UNSEEN_TASKS)


def write_task_list(path, seen, unseen=()) -> None:
    tasks = [dict(t.to_dict(), split="seen") for t in seen]
    tasks += [dict(t.to_dict(), split="unseen") for t in unseen]
    Path(path).write_text(json.dumps({"tasks": tasks}, indent=2) + "\n", encoding="utf-8")


def read_task_list(path) -> tuple[list[TaskSpec], list[TaskSpec]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        seen, unseen = [], []
        for entry in doc["tasks"]:
            split = entry.get("split", "seen")
            if split not in ("seen", "unseen"):
                raise ValueError(f"unknown split {split!r}")
            (seen if split == "seen" else unseen).append(TaskSpec.from_dict(entry))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"cannot read task list {path}: {exc}") from exc
    return seen, unseen
