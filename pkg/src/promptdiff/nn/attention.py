from __future__ import annotations

import numpy as np

from promptdiff.errors import ConfigError, ShapeError
from promptdiff.nn.layers import Dense, LayerNorm, Mlp, as_matrix
from promptdiff.nn.module import Module


def softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


class AttentionBlock(Module):
    """Pre-norm transformer block over one token sequence (rows = tokens).

    y = h + ff(ln2(h)),  h = x + attn(ln1(x))
    """

    def __init__(self, d_model: int, num_heads: int, ff_mult: int = 2,
                 rng: np.random.Generator | None = None, ln_eps: float = 1e-5):
        super().__init__()
        if num_heads < 1 or d_model % num_heads:
            raise ConfigError(f"d_model={d_model} is not divisible by num_heads={num_heads}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_model = d_model
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.ln1 = LayerNorm(d_model, ln_eps)
        self.query = Dense(d_model, d_model, rng=rng)
        self.key = Dense(d_model, d_model, rng=rng)
        self.value = Dense(d_model, d_model, rng=rng)
        self.output = Dense(d_model, d_model, rng=rng)
        self.ln2 = LayerNorm(d_model, ln_eps)
        self.ff = Mlp([d_model, ff_mult * d_model, d_model], "mish", rng=rng)
        self.last_attention: np.ndarray | None = None

    def children(self):
        return {"ln1": self.ln1, "query": self.query, "key": self.key, "value": self.value,
                "output": self.output, "ln2": self.ln2, "ff": self.ff}

    def _split(self, x: np.ndarray) -> np.ndarray:
        # (T, d_model) -> (H, T, d_head)
        return x.reshape(x.shape[0], self.num_heads, self.d_head).transpose(1, 0, 2)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        return x.transpose(1, 0, 2).reshape(x.shape[1], self.d_model)

    def forward(self, x, cache: bool = True) -> np.ndarray:
        x = as_matrix(x)
        if x.shape[1] != self.d_model:
            raise ShapeError(f"AttentionBlock expects d_model={self.d_model}, got {x.shape[1]}")
        n1 = self.ln1.forward(x, cache)
        q = self._split(self.query.forward(n1, cache))
        k = self._split(self.key.forward(n1, cache))
        v = self._split(self.value.forward(n1, cache))
        scale = 1.0 / np.sqrt(self.d_head)
        p = softmax(q @ k.transpose(0, 2, 1) * scale)
        self.last_attention = p
        h = x + self.output.forward(self._merge(p @ v), cache)
        y = h + self.ff.forward(self.ln2.forward(h, cache), cache)
        if cache:
            self._push((q, k, v, p))
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        q, k, v, p = self._pop()
        dh = dy + self.ln2.backward(self.ff.backward(dy))
        do = self._split(self.output.backward(dh))
        scale = 1.0 / np.sqrt(self.d_head)
        dp = do @ v.transpose(0, 2, 1)
        dv = p.transpose(0, 2, 1) @ do
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        dn1 = (self.query.backward(self._merge(dq))
               + self.key.backward(self._merge(dk))
               + self.value.backward(self._merge(dv)))
        return dh + self.ln1.backward(dn1)
