from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol

import numpy as np

from promptdiff.errors import ConfigError, ShapeError
from promptdiff.nn import Mlp
from promptdiff.nn.layers import as_matrix

INSTRUCTION = "convert the following task description into a structured policy representation"


@dataclass(frozen=True)
class TextPrompt:
    task_name: str
    objective: str
    constraints: tuple[str, ...] = ()
    attributes: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        if not self.task_name.strip():
            raise ValueError("task_name must be non-empty")
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "attributes", tuple((str(k), str(v)) for k, v in self.attributes))
        for value in (self.task_name, self.objective, *self.constraints,
                      *(x for kv in self.attributes for x in kv)):
            if "\n" in value:
                raise ValueError("prompt fields must be single-line")
        for key, _ in self.attributes:
            if ":" in key:
                raise ValueError(f"attribute key {key!r} may not contain ':'")


def serialize_text_prompt(p: TextPrompt, instruction: str = INSTRUCTION) -> str:
    lines = [f"Instruction: {instruction}", f"Task: {p.task_name}", f"Objective: {p.objective}"]
    if p.constraints:
        lines.append("Constraints:")
        lines.extend(f"- {c}" for c in p.constraints)
    if p.attributes:
        lines.append("Attributes:")
        lines.extend(f"  {k}: {v}" for k, v in p.attributes)
    return "\n".join(lines)


def parse_text_prompt(text: str) -> TextPrompt:
    """Inverse of :func:`serialize_text_prompt`."""
    fields: dict[str, str] = {}
    constraints: list[str] = []
    attributes: list[tuple[str, str]] = []
    section = None
    for lineno, line in enumerate(text.split("\n"), start=1):
        if section == "constraints" and line.startswith("- "):
            constraints.append(line[2:])
            continue
        if section == "attributes" and line.startswith("  "):
            key, sep, value = line[2:].partition(": ")
            if not sep:
                raise ValueError(f"line {lineno}: malformed attribute {line!r}")
            attributes.append((key, value))
            continue
        if line == "Constraints:":
            section = "constraints"
        elif line == "Attributes:":
            section = "attributes"
        else:
            key, sep, value = line.partition(": ")
            if not sep or key not in ("Instruction", "Task", "Objective"):
                raise ValueError(f"line {lineno}: unexpected line {line!r}")
            fields[key] = value
            section = None
    if "Task" not in fields or "Objective" not in fields:
        raise ValueError("prompt text lacks Task or Objective")
    return TextPrompt(fields["Task"], fields["Objective"], tuple(constraints), tuple(attributes))


class TextEncoder(Protocol):
    """Frozen text encoder: maps a string to a fixed-width raw embedding."""

    d_raw: int

    def encode(self, text: str) -> np.ndarray: ...


@lru_cache(maxsize=65536)
def _bucket(feature: str, d_raw: int) -> tuple[int, float]:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return h % d_raw, (1.0 if (h >> 63) & 1 else -1.0)


def _features(text: str) -> list[str]:
    text = text.lower()
    feats = [f"w:{tok}" for tok in text.split()]
    feats.extend(f"c:{text[i:i + 3]}" for i in range(len(text) - 2))
    return feats


def hash_text_encode(text: str, d_raw: int = 256) -> np.ndarray:
    """Signed feature hashing of word tokens and character 3-grams, L2-normalized."""
    if d_raw < 8:
        raise ConfigError(f"d_raw must be >= 8, got {d_raw}")
    vec = np.zeros(d_raw)
    for feat in _features(text):
        idx, sign = _bucket(feat, d_raw)
        vec[idx] += sign
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


class HashTextEncoder:
    """Deterministic stand-in for a pre-trained language model encoder."""

    def __init__(self, d_raw: int = 256):
        if d_raw < 8:
            raise ConfigError(f"d_raw must be >= 8, got {d_raw}")
        self.d_raw = d_raw

    def encode(self, text: str) -> np.ndarray:
        return hash_text_encode(text, self.d_raw)


class ProjectionHead(Mlp):
    """Trainable 3-layer head on top of a frozen encoder output."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, n_layers: int = 3,
                 rng: np.random.Generator | None = None):
        dims = [in_dim] + [hidden] * (n_layers - 1) + [out_dim]
        super().__init__(dims, hidden_activation="relu", output_activation="identity", rng=rng)


def embed_text(encoder: TextEncoder, head: Mlp, p: TextPrompt, cache: bool = True) -> np.ndarray:
    """z_text = head(encoder(instruction + prompt)); returns a 1-D vector.

    The encoder is never differentiated; call ``head.backward`` with the
    upstream gradient (shape 1 x d_embed) to train the head.
    """
    raw = np.asarray(encoder.encode(serialize_text_prompt(p)), dtype=np.float64)
    if raw.shape != (head.in_dim,):
        raise ShapeError(f"encoder width {raw.shape} does not match head input {head.in_dim}")
    return head.forward(as_matrix(raw), cache)[0]
