"""Prompt-conditioned diffusion actor: noise predictor, reverse-chain sampling, loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from promptdiff.diffusion import NoiseSchedule, ddpm_residual, forward_noise, reverse_coefficients, reverse_step
from promptdiff.errors import EmptyInputError, ShapeError, StateError
from promptdiff.nn import Adam, Mlp, Module, sinusoidal_embed
from promptdiff.nn.layers import as_matrix


@dataclass
class PolicyContext:
    """Conditioning for a batch: states (B, state_dim) plus the task's two embeddings.

    Embeddings may be a single vector shared by the batch or one row per state.
    """

    state: np.ndarray
    z_text: np.ndarray
    z_traj: np.ndarray

    def __post_init__(self):
        self.state = as_matrix(self.state)
        self.z_text = np.asarray(self.z_text, dtype=np.float64)
        self.z_traj = np.asarray(self.z_traj, dtype=np.float64)

    @property
    def batch(self) -> int:
        return self.state.shape[0]


def broadcast_embedding(z: np.ndarray, batch: int, width: int, label: str) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = np.broadcast_to(z, (batch, z.shape[0]))
    if z.shape != (batch, width):
        raise ShapeError(f"{label} has shape {z.shape}, expected ({batch}, {width})")
    return z


class NoisePredictor(Module):
    """eps(a_k, s, z_text, z_traj, k) as an Mlp over the concatenated inputs."""

    def __init__(self, state_dim: int, action_dim: int, d_embed: int, hidden=(128, 128, 128),
                 d_time: int = 16, rng: np.random.Generator | None = None):
        super().__init__()
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.d_embed = d_embed
        self.d_time = d_time
        self.input_dim = action_dim + state_dim + 2 * d_embed + d_time
        self.trunk = Mlp([self.input_dim, *hidden, action_dim], "mish", rng=rng)

    def children(self):
        return {"trunk": self.trunk}

    def forward(self, a_k, ctx: PolicyContext, k, cache: bool = True) -> np.ndarray:
        a_k = as_matrix(a_k)
        batch = a_k.shape[0]
        if a_k.shape[1] != self.action_dim:
            raise ShapeError(f"action width {a_k.shape[1]} != {self.action_dim}")
        if ctx.state.shape != (batch, self.state_dim):
            raise ShapeError(f"state shape {ctx.state.shape} != ({batch}, {self.state_dim})")
        zt = broadcast_embedding(ctx.z_text, batch, self.d_embed, "z_text")
        zj = broadcast_embedding(ctx.z_traj, batch, self.d_embed, "z_traj")
        k = np.broadcast_to(np.asarray(k), (batch,))
        x = np.concatenate([a_k, ctx.state, zt, zj, sinusoidal_embed(k, self.d_time)], axis=1)
        out = self.trunk.forward(x, cache)
        if cache:
            self._push((ctx.z_text.ndim, ctx.z_traj.ndim))
        return out

    def backward(self, d_eps) -> dict[str, np.ndarray]:
        """Returns input gradients; embeddings shared by the batch get summed gradients."""
        zt_ndim, zj_ndim = self._pop()
        dx = self.trunk.backward(as_matrix(d_eps))
        A, S, D = self.action_dim, self.state_dim, self.d_embed
        dzt = dx[:, A + S:A + S + D]
        dzj = dx[:, A + S + D:A + S + 2 * D]
        return {
            "action": dx[:, :A],
            "state": dx[:, A:A + S],
            "z_text": dzt.sum(axis=0) if zt_ndim == 1 else dzt,
            "z_traj": dzj.sum(axis=0) if zj_ndim == 1 else dzj,
        }


def predict_noise(net: NoisePredictor, a_k, ctx: PolicyContext, k, cache: bool = True) -> np.ndarray:
    return net.forward(a_k, ctx, k, cache)


def draw_chain_noise(rng: np.random.Generator, K: int, batch: int, action_dim: int) -> np.ndarray:
    """Noise for one reverse chain, in order of use.

    Entry 0 is the prior sample a^K; entry i (1 <= i <= K) is the Gaussian
    noise of reverse step k = K - i + 1.
    """
    return rng.standard_normal((K + 1, batch, action_dim))


def _check_noise(noise, schedule: NoiseSchedule, batch: int, action_dim: int) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    expected = (schedule.K + 1, batch, action_dim)
    if noise.shape != expected:
        raise ValueError(f"chain noise must have shape {expected} (prior plus one vector per step), "
                         f"got {noise.shape}")
    return noise


class ReverseChain:
    """A reverse-diffusion sample that can be differentiated w.r.t. the net and embeddings.

    Clipping to [-1, 1] after each step passes gradients straight through
    inside the box and blocks them outside.
    """

    def __init__(self, net: NoisePredictor, schedule: NoiseSchedule, ctx: PolicyContext,
                 noise: np.ndarray, cache: bool = True):
        self.net = net
        self.schedule = schedule
        self.cached = cache
        noise = _check_noise(noise, schedule, ctx.batch, net.action_dim)
        self._pre: list[np.ndarray] = []
        a = noise[0]
        for i, k in enumerate(range(schedule.K, 0, -1), start=1):
            eps = net.forward(a, ctx, k, cache)
            pre = reverse_step(schedule, a, eps, k, noise[i])
            if cache:
                self._pre.append(pre)
            a = np.clip(pre, -1.0, 1.0)
        self.action = a
        self._done = not cache

    def backward(self, d_action) -> dict[str, np.ndarray]:
        """Accumulate net gradients for dL/da^0; returns gradients for the embeddings."""
        if self._done:
            raise StateError("reverse chain has no cached forward pass")
        self._done = True
        g = np.asarray(d_action, dtype=np.float64)
        dzt = dzj = 0.0
        for k in range(1, self.schedule.K + 1):
            pre = self._pre[self.schedule.K - k]
            g = g * (np.abs(pre) <= 1.0)
            inv_sqrt_alpha, coef = reverse_coefficients(self.schedule, k)
            grads = self.net.backward(-inv_sqrt_alpha * coef * g)
            g = inv_sqrt_alpha * g + grads["action"]
            dzt = dzt + grads["z_text"]
            dzj = dzj + grads["z_traj"]
        return {"z_text": dzt, "z_traj": dzj, "prior": g}


def sample_action(net: NoisePredictor, schedule: NoiseSchedule, ctx: PolicyContext,
                  rng: np.random.Generator) -> np.ndarray:
    noise = draw_chain_noise(rng, schedule.K, ctx.batch, net.action_dim)
    return ReverseChain(net, schedule, ctx, noise, cache=False).action


def sample_action_differentiable(net: NoisePredictor, schedule: NoiseSchedule, ctx: PolicyContext,
                                 noise) -> ReverseChain:
    return ReverseChain(net, schedule, ctx, noise, cache=True)


def draw_diffusion_noise(rng: np.random.Generator, K: int, batch: int, action_dim: int):
    """Per-element step k ~ U{1..K} and eps ~ N(0, I)."""
    k = rng.integers(1, K + 1, size=batch)
    eps = rng.standard_normal((batch, action_dim))
    return k, eps


def diffusion_loss(net: NoisePredictor, schedule: NoiseSchedule, a0, ctx: PolicyContext,
                   rng: np.random.Generator | None = None, k=None, eps=None,
                   backward: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    """Noise-prediction MSE; accumulates net gradients and returns input gradients.

    Either ``rng`` or both ``k`` and ``eps`` must be supplied.
    """
    a0 = as_matrix(a0)
    if a0.shape[0] == 0:
        raise EmptyInputError("diffusion_loss needs a non-empty batch")
    if k is None or eps is None:
        if rng is None:
            raise ValueError("supply rng or explicit (k, eps)")
        k, eps = draw_diffusion_noise(rng, schedule.K, a0.shape[0], a0.shape[1])
    noisy = forward_noise(schedule, a0, k, eps)
    pred = net.forward(noisy, ctx, k, cache=backward)
    loss, d_pred = ddpm_residual(eps, pred)
    if not backward:
        return loss, {}
    grads = net.backward(d_pred)
    return loss, {"z_text": grads["z_text"], "z_traj": grads["z_traj"], "state": grads["state"]}


def behavior_clone(net: NoisePredictor, schedule: NoiseSchedule, states, actions, steps: int,
                   batch_size: int = 128, learning_rate: float = 1e-3,
                   rng: np.random.Generator | None = None, z_text=None, z_traj=None) -> list[float]:
    """Fit ``net`` with the diffusion loss alone; returns the loss of every step.

    Embeddings default to zeros, i.e. an unconditioned policy.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    states, actions = as_matrix(states), as_matrix(actions)
    zt = np.zeros(net.d_embed) if z_text is None else z_text
    zj = np.zeros(net.d_embed) if z_traj is None else z_traj
    opt = Adam({"policy": net}, learning_rate)
    losses = []
    for _ in range(steps):
        idx = rng.integers(len(states), size=batch_size)
        opt.zero_grad()
        loss, _ = diffusion_loss(net, schedule, actions[idx], PolicyContext(states[idx], zt, zj), rng)
        opt.step()
        losses.append(loss)
    return losses
