"""Line-delimited dataset files, one per task.

Line 1 is a header record; every following line is one transition. Reals
are written with 17 significant digits, which round-trips float64 exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from promptdiff.envdata.dataset import TaskDataset
from promptdiff.envdata.env import TaskSpec
from promptdiff.errors import LoadError
from promptdiff.prompts import TrajectoryPrompt, parse_text_prompt, serialize_text_prompt

FORMAT_VERSION = 1
SUFFIX = ".jsonl"


def _dumps(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_dumps(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError(f"cannot store non-finite value {obj}")
        return format(float(obj), ".17g")
    if obj is None:
        return "null"
    return json.dumps(obj)


def _header(ds: TaskDataset) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "task_id": ds.task_id,
        "dims": {"state": ds.state_dim, "action": ds.action_dim},
        "num_transitions": len(ds),
        "text_prompt": serialize_text_prompt(ds.text_prompt),
        "trajectory_prompt": {"states": ds.trajectory_prompt.states,
                              "actions": ds.trajectory_prompt.actions},
        "spec": ds.spec.to_dict() if ds.spec is not None else None,
    }


def write_task_file(ds: TaskDataset, path) -> None:
    lines = [_dumps(_header(ds))]
    for i in range(len(ds)):
        lines.append(_dumps({"s": ds.states[i], "a": ds.actions[i], "r": float(ds.rewards[i]),
                             "s_next": ds.next_states[i], "terminal": bool(ds.terminals[i])}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _vector(rec: dict, key: str, width: int, where: str) -> list:
    v = rec.get(key)
    if not isinstance(v, list) or len(v) != width:
        raise LoadError(f"{where}: field {key!r} must be a list of {width} numbers")
    return v


def read_task_file(path) -> TaskDataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read dataset file {path}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise LoadError(f"{path}:1: empty dataset file")

    def parse(lineno: int) -> dict:
        try:
            rec = json.loads(lines[lineno - 1])
        except json.JSONDecodeError as exc:
            raise LoadError(f"{path}:{lineno}: malformed record ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise LoadError(f"{path}:{lineno}: record is not an object")
        return rec

    header = parse(1)
    if header.get("format_version") != FORMAT_VERSION:
        raise LoadError(f"{path}:1: unsupported format_version {header.get('format_version')!r}")
    try:
        sd, ad = int(header["dims"]["state"]), int(header["dims"]["action"])
        n = int(header["num_transitions"])
        text_prompt = parse_text_prompt(header["text_prompt"])
        tp = header["trajectory_prompt"]
        traj = TrajectoryPrompt(np.asarray(tp["states"], dtype=np.float64).reshape(-1, sd),
                                np.asarray(tp["actions"], dtype=np.float64).reshape(-1, ad))
        spec = TaskSpec.from_dict(header["spec"]) if header.get("spec") else None
        task_id = str(header["task_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"{path}:1: invalid header: {exc}") from exc

    if len(lines) - 1 < n:
        raise LoadError(f"{path}:{len(lines) + 1}: file truncated, expected {n} transitions, "
                        f"found {len(lines) - 1}")
    if len(lines) - 1 > n:
        raise LoadError(f"{path}:{n + 2}: unexpected record beyond the declared {n} transitions")
    s = np.empty((n, sd))
    a = np.empty((n, ad))
    r = np.empty(n)
    s2 = np.empty((n, sd))
    term = np.empty(n, dtype=bool)
    for i in range(n):
        lineno = i + 2
        rec = parse(lineno)
        where = f"{path}:{lineno}"
        try:
            s[i] = _vector(rec, "s", sd, where)
            a[i] = _vector(rec, "a", ad, where)
            s2[i] = _vector(rec, "s_next", sd, where)
            r[i] = float(rec["r"])
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"{where}: invalid transition: {exc}") from exc
        if not isinstance(rec.get("terminal"), bool):
            raise LoadError(f"{where}: field 'terminal' must be true or false")
        term[i] = rec["terminal"]
    return TaskDataset(task_id, s, a, r, s2, term, text_prompt, traj, spec)


def write_dataset(datasets, path) -> list[Path]:
    """Write each task to ``<path>/<index>_<task_id>.jsonl``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for old in root.glob(f"*{SUFFIX}"):
        old.unlink()
    out = []
    for i, ds in enumerate(datasets):
        p = root / f"{i:03d}_{ds.task_id}{SUFFIX}"
        write_task_file(ds, p)
        out.append(p)
    return out


def read_dataset(path) -> list[TaskDataset]:
    root = Path(path)
    if root.is_file():
        return [read_task_file(root)]
    if not root.is_dir():
        raise LoadError(f"dataset path {root} does not exist")
    files = sorted(root.glob(f"*{SUFFIX}"))
    if not files:
        raise LoadError(f"no {SUFFIX} dataset files in {root}")
    return [read_task_file(f) for f in files]
