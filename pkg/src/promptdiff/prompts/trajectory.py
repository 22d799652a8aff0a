from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from promptdiff.errors import EmptyInputError, ShapeError
from promptdiff.nn import AttentionBlock, Dense, Module, mean_pool, mean_pool_backward, sinusoidal_embed
from promptdiff.prompts.text import ProjectionHead


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x.reshape(1, -1) if x.size else x.reshape(0, 0)
    return x


@dataclass(frozen=True, eq=False)
class TrajectoryPrompt:
    states: np.ndarray   # (L, state_dim)
    actions: np.ndarray  # (L, action_dim)

    def __post_init__(self):
        s = _rows(self.states)
        a = _rows(self.actions)
        if s.shape[0] != a.shape[0]:
            raise ShapeError(f"{s.shape[0]} states but {a.shape[0]} actions")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
            raise ValueError("trajectory prompt contains non-finite values")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    def __len__(self) -> int:
        return self.states.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, TrajectoryPrompt)
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions))


def truncate_indices(length: int, max_len: int) -> np.ndarray:
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if length <= max_len:
        return np.arange(length)
    return np.rint(np.linspace(0, length - 1, max_len)).astype(int)


def truncate_prompt(z: TrajectoryPrompt, max_len: int) -> TrajectoryPrompt:
    """Uniform-stride subsample to at most ``max_len`` transitions, keeping both ends."""
    idx = truncate_indices(len(z), max_len)
    if len(idx) == len(z):
        return z
    return TrajectoryPrompt(z.states[idx], z.actions[idx])


class TrajectoryEncoder(Module):
    """Transformer over interleaved state/action tokens, mean-pooled, then projected."""

    def __init__(self, state_dim: int, action_dim: int, d_model: int = 32, num_blocks: int = 2,
                 num_heads: int = 4, d_hidden: int = 64, d_embed: int = 32, max_prompt_len: int = 64,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.d_model = d_model
        self.d_embed = d_embed
        self.max_prompt_len = max_prompt_len
        self.state_embed = Dense(state_dim, d_model, rng=rng)
        self.action_embed = Dense(action_dim, d_model, rng=rng)
        self.blocks = [AttentionBlock(d_model, num_heads, rng=rng) for _ in range(num_blocks)]
        self.head = ProjectionHead(d_model, d_hidden, d_embed, rng=rng)

    def children(self):
        out = {"state_embed": self.state_embed, "action_embed": self.action_embed}
        out.update({f"blocks.{i}": b for i, b in enumerate(self.blocks)})
        out["head"] = self.head
        return out

    def forward(self, z: TrajectoryPrompt, cache: bool = True) -> np.ndarray:
        n = len(z)
        if n == 0:
            raise EmptyInputError("trajectory prompt is empty")
        if n > self.max_prompt_len:
            raise ShapeError(f"trajectory prompt length {n} exceeds max_prompt_len={self.max_prompt_len}")
        if z.states.shape[1] != self.state_dim or z.actions.shape[1] != self.action_dim:
            raise ShapeError(
                f"prompt dims ({z.states.shape[1]}, {z.actions.shape[1]}) do not match encoder "
                f"({self.state_dim}, {self.action_dim})")
        tokens = np.empty((2 * n, self.d_model))
        tokens[0::2] = self.state_embed.forward(z.states, cache)
        tokens[1::2] = self.action_embed.forward(z.actions, cache)
        h = tokens + sinusoidal_embed(np.arange(2 * n), self.d_model)
        for block in self.blocks:
            h = block.forward(h, cache)
        if cache:
            self._push(2 * n)
        return self.head.forward(mean_pool(h), cache)[0]

    def backward(self, dz) -> None:
        """Accumulate parameter gradients for an upstream gradient on the embedding."""
        rows = self._pop()
        dh = mean_pool_backward(self.head.backward(np.reshape(dz, (1, -1))), rows)
        for block in reversed(self.blocks):
            dh = block.backward(dh)
        self.action_embed.backward(dh[1::2])
        self.state_embed.backward(dh[0::2])


def embed_trajectory(enc: TrajectoryEncoder, z: TrajectoryPrompt, cache: bool = True) -> np.ndarray:
    return enc.forward(z, cache)
