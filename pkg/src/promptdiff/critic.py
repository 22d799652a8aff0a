"""Twin Q-networks with Polyak-averaged target copies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from promptdiff.errors import ContractError, EmptyInputError, ShapeError
from promptdiff.nn import Mlp, Module, frozen
from promptdiff.nn.layers import as_matrix
from promptdiff.policy import PolicyContext, ReverseChain, broadcast_embedding


class QNetwork(Module):
    """Q(s, a[, z_text, z_traj]) -> scalar per row."""

    def __init__(self, state_dim: int, action_dim: int, d_embed: int, hidden=(128, 128, 128),
                 prompt_conditioned: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.d_embed = d_embed
        self.prompt_conditioned = prompt_conditioned
        self.input_dim = state_dim + action_dim + (2 * d_embed if prompt_conditioned else 0)
        self.trunk = Mlp([self.input_dim, *hidden, 1], "mish", rng=rng)

    def children(self):
        return {"trunk": self.trunk}

    def forward(self, s, a, z_text=None, z_traj=None, cache: bool = True) -> np.ndarray:
        s, a = as_matrix(s), as_matrix(a)
        batch = s.shape[0]
        if s.shape[1] != self.state_dim or a.shape != (batch, self.action_dim):
            raise ShapeError(f"Q expects states (B, {self.state_dim}) and actions (B, {self.action_dim}), "
                             f"got {s.shape} and {a.shape}")
        parts = [s, a]
        if self.prompt_conditioned:
            parts.append(broadcast_embedding(z_text, batch, self.d_embed, "z_text"))
            parts.append(broadcast_embedding(z_traj, batch, self.d_embed, "z_traj"))
            shapes = (np.ndim(z_text), np.ndim(z_traj))
        else:
            shapes = None
        q = self.trunk.forward(np.concatenate(parts, axis=1), cache)[:, 0]
        if cache:
            self._push(shapes)
        return q

    def backward(self, dq) -> dict[str, np.ndarray]:
        shapes = self._pop()
        dx = self.trunk.backward(np.reshape(dq, (-1, 1)))
        S, A, D = self.state_dim, self.action_dim, self.d_embed
        out = {"state": dx[:, :S], "action": dx[:, S:S + A]}
        if shapes is not None:
            dzt = dx[:, S + A:S + A + D]
            dzj = dx[:, S + A + D:]
            out["z_text"] = dzt.sum(axis=0) if shapes[0] == 1 else dzt
            out["z_traj"] = dzj.sum(axis=0) if shapes[1] == 1 else dzj
        else:
            out["z_text"] = out["z_traj"] = np.zeros(D)
        return out


def q_value(net: QNetwork, s, a, z_text=None, z_traj=None, cache: bool = False) -> np.ndarray:
    return net.forward(s, a, z_text, z_traj, cache)


class CriticPair(Module):
    def __init__(self, state_dim: int, action_dim: int, d_embed: int, hidden=(128, 128, 128),
                 prompt_conditioned: bool = True, polyak_tau: float = 0.005,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if not 0.0 < polyak_tau <= 1.0:
            raise ValueError(f"polyak_tau must be in (0, 1], got {polyak_tau}")
        rng = rng if rng is not None else np.random.default_rng(0)
        make = lambda: QNetwork(state_dim, action_dim, d_embed, hidden, prompt_conditioned, rng)  # noqa: E731
        self.q1, self.q2 = make(), make()
        self.q1_target, self.q2_target = make(), make()
        self.q1_target.copy_from(self.q1)
        self.q2_target.copy_from(self.q2)
        self.q1_target.set_trainable(False)
        self.q2_target.set_trainable(False)
        self.polyak_tau = polyak_tau

    def children(self):
        return {"q1": self.q1, "q2": self.q2, "q1_target": self.q1_target, "q2_target": self.q2_target}

    @property
    def online(self) -> tuple[QNetwork, QNetwork]:
        return self.q1, self.q2


@dataclass
class CriticBatch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    a_next: np.ndarray
    terminal: np.ndarray
    z_text: np.ndarray | None = None
    z_traj: np.ndarray | None = None


@dataclass
class QLossResult:
    loss1: float
    loss2: float
    target: np.ndarray
    target_q1: np.ndarray
    target_q2: np.ndarray
    q1: np.ndarray
    q2: np.ndarray


def bellman_target(pair: CriticPair, batch: CriticBatch, gamma: float):
    """y = r + gamma * (1 - terminal) * min(Q1_target, Q2_target); no gradient flows into y."""
    t1 = pair.q1_target.forward(batch.s_next, batch.a_next, batch.z_text, batch.z_traj, cache=False)
    t2 = pair.q2_target.forward(batch.s_next, batch.a_next, batch.z_text, batch.z_traj, cache=False)
    not_done = 1.0 - np.asarray(batch.terminal, dtype=np.float64)
    y = np.asarray(batch.r, dtype=np.float64) + gamma * not_done * np.minimum(t1, t2)
    return y, t1, t2


def q_loss(pair: CriticPair, batch: CriticBatch, gamma: float) -> QLossResult:
    """Clipped double-Q regression; accumulates gradients into q1 and q2 only."""
    if np.asarray(batch.r).size == 0:
        raise EmptyInputError("q_loss needs a non-empty batch")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    y, t1, t2 = bellman_target(pair, batch, gamma)
    n = y.shape[0]
    losses, values = [], []
    for net in pair.online:
        q = net.forward(batch.s, batch.a, batch.z_text, batch.z_traj, cache=True)
        diff = q - y
        losses.append(float(np.mean(diff * diff)))
        values.append(q)
        net.backward(2.0 * diff / n)
    return QLossResult(losses[0], losses[1], y, t1, t2, values[0], values[1])


@dataclass
class RewardObjective:
    value: float
    q: np.ndarray
    d_z_text: np.ndarray
    d_z_traj: np.ndarray


def reward_objective(pair: CriticPair, which: int, ctx: PolicyContext, chain: ReverseChain) -> RewardObjective:
    """Mean Q of critic ``which`` at actions drawn by a differentiable reverse chain.

    Gradients of the objective accumulate into the policy network behind
    ``chain``; the critic is frozen and receives none. The returned embedding
    gradients combine the path through the sampled action with the direct
    path through the critic's prompt inputs.
    """
    if which not in (0, 1):
        raise ValueError(f"critic index must be 0 or 1, got {which}")
    if not isinstance(chain, ReverseChain) or not chain.cached:
        raise ContractError("reward_objective needs actions from sample_action_differentiable")
    net = pair.online[which]
    n = chain.action.shape[0]
    if n == 0:
        raise EmptyInputError("reward_objective needs a non-empty batch")
    with frozen(net):
        q = net.forward(ctx.state, chain.action, ctx.z_text, ctx.z_traj, cache=True)
        direct = net.backward(np.full(n, 1.0 / n))
    through_action = chain.backward(direct["action"])
    return RewardObjective(
        float(q.mean()), q,
        direct["z_text"] + through_action["z_text"],
        direct["z_traj"] + through_action["z_traj"],
    )


def polyak_update(pair: CriticPair, tau: float | None = None) -> None:
    tau = pair.polyak_tau if tau is None else tau
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    for online, target in ((pair.q1, pair.q1_target), (pair.q2, pair.q2_target)):
        src = online.parameters()
        for name, p in target.named_parameters():
            if tau == 1.0:
                np.copyto(p, src[name])
            else:
                p *= 1.0 - tau
                p += tau * src[name]
