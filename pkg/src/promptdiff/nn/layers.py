from __future__ import annotations

from typing import Sequence

import numpy as np

from promptdiff.errors import ConfigError, EmptyInputError, ShapeError
from promptdiff.nn.module import Module

ACTIVATIONS = ("identity", "relu", "mish")


def _exp_capped(z: np.ndarray) -> np.ndarray:
    # beyond 40 both tanh(softplus(z)) and sigmoid(z) round to 1 in float64
    return np.exp(np.minimum(z, 40.0))


def _mish_tanh(w: np.ndarray) -> np.ndarray:
    """tanh(softplus(z)) written in terms of w = exp(z)."""
    n = w * (w + 2.0)
    return n / (n + 2.0)


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "mish":
        return z * _mish_tanh(_exp_capped(z))
    raise ConfigError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray) -> np.ndarray:
    """Derivative of the activation evaluated at the pre-activation ``z``."""
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "mish":
        w = _exp_capped(z)
        t = _mish_tanh(w)
        return t + z * (1.0 - t * t) * (w / (1.0 + w))
    raise ConfigError(f"unknown activation {name!r}")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected a 1-D or 2-D array, got shape {x.shape}")
    return x


class Dense(Module):
    """Fully connected layer ``activation(x @ W + b)``; W has shape (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        if in_dim < 1 or out_dim < 1:
            raise ConfigError(f"layer dims must be positive, got {in_dim}->{out_dim}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.add_param("W", glorot_uniform(rng, in_dim, out_dim))
        self.add_param("b", np.zeros(out_dim))

    def forward(self, x, cache: bool = True) -> np.ndarray:
        x = as_matrix(x)
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"Dense expects {self.in_dim} input columns, got {x.shape[1]}")
        z = x @ self.params["W"] + self.params["b"]
        if cache:
            self._push((x, z))
        return activate(self.activation, z)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, z = self._pop()
        dz = np.asarray(dy) * activation_grad(self.activation, z)
        if self.trainable:
            self.grads["W"] += x.T @ dz
            self.grads["b"] += dz.sum(axis=0)
        return dz @ self.params["W"].T


class Mlp(Module):
    """Chain of dense layers; hidden layers share one activation."""

    def __init__(self, dims: Sequence[int], hidden_activation: str = "mish",
                 output_activation: str = "identity", rng: np.random.Generator | None = None):
        super().__init__()
        if len(dims) < 2:
            raise ConfigError("an Mlp needs at least one layer (two dims)")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dims = tuple(int(d) for d in dims)
        n = len(dims) - 1
        self.layers = [
            Dense(dims[i], dims[i + 1],
                  hidden_activation if i < n - 1 else output_activation, rng)
            for i in range(n)
        ]

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def children(self):
        return {str(i): layer for i, layer in enumerate(self.layers)}

    def forward(self, x, cache: bool = True) -> np.ndarray:
        h = as_matrix(x)
        for layer in self.layers:
            h = layer.forward(h, cache)
        return h

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_last_layer(self) -> None:
        last = self.layers[-1]
        last.params["W"].fill(0.0)
        last.params["b"].fill(0.0)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.add_param("scale", np.ones(dim))
        self.add_param("offset", np.zeros(dim))

    def forward(self, x, cache: bool = True) -> np.ndarray:
        x = as_matrix(x)
        if x.shape[1] != self.dim:
            raise ShapeError(f"LayerNorm expects {self.dim} columns, got {x.shape[1]}")
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        if cache:
            self._push((xhat, inv))
        return xhat * self.params["scale"] + self.params["offset"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self._pop()
        if self.trainable:
            self.grads["scale"] += (dy * xhat).sum(axis=0)
            self.grads["offset"] += dy.sum(axis=0)
        dxhat = dy * self.params["scale"]
        return inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))


def mean_pool(x) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[0] < 1:
        raise EmptyInputError("mean_pool needs at least one row")
    return x.mean(axis=0, keepdims=True)


def mean_pool_backward(dy, rows: int) -> np.ndarray:
    if rows < 1:
        raise EmptyInputError("mean_pool needs at least one row")
    dy = as_matrix(dy)
    return np.repeat(dy / rows, rows, axis=0)


def sinusoidal_embed(k, dim: int) -> np.ndarray:
    """Interleaved sin/cos features at geometric frequencies.

    ``k`` may be a scalar (returns 1 x dim) or a 1-D array of positions
    (returns len(k) x dim). Column 2i holds sin(k * f_i), column 2i+1 holds
    cos(k * f_i) with f_i = 10000 ** (-2i / dim).
    """
    if dim < 2 or dim % 2:
        raise ConfigError(f"sinusoidal embedding width must be even and >= 2, got {dim}")
    k = np.atleast_1d(np.asarray(k, dtype=np.float64))
    freqs = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = k[:, None] * freqs[None, :]
    out = np.empty((k.shape[0], dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out
