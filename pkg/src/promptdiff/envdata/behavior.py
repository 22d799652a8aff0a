from __future__ import annotations

import numpy as np

from promptdiff.envdata.env import VELOCITY_DECAY, TaskSpec

GAIN = 2.0          # desired velocity per unit of goal offset
MAX_SPEED = 2.0
INFLUENCE = 0.3     # obstacle clearance at which repulsion starts
REPULSION = 2.0
DETOUR = 2.5        # tangential push that steers around the obstacle


def desired_velocity(spec: TaskSpec, s: np.ndarray) -> np.ndarray:
    """Velocity the controller tries to reach on the next step; s has shape (N, 6)."""
    pos, delta = s[:, 0:2], s[:, 4:6]
    v = GAIN * delta
    speed = np.linalg.norm(v, axis=1, keepdims=True)
    v = np.where(speed > MAX_SPEED, v * MAX_SPEED / np.maximum(speed, 1e-12), v)
    if spec.has_obstacle:
        center = np.asarray(spec.obstacle_center)
        off = pos - center
        dist = np.maximum(np.linalg.norm(off, axis=1, keepdims=True), 1e-12)
        w = np.clip((INFLUENCE - (dist - spec.obstacle_radius)) / INFLUENCE, 0.0, 1.0)
        n = off / dist
        # deflect only while the straight line to the goal passes through the obstacle
        seg2 = np.maximum(np.sum(delta * delta, axis=1, keepdims=True), 1e-12)
        u = np.clip(np.sum(-off * delta, axis=1, keepdims=True) / seg2, 0.0, 1.0)
        closest = np.linalg.norm(off + u * delta, axis=1, keepdims=True)
        blocked = closest < spec.obstacle_radius + 0.05
        # go around on the side the goal already leans towards (counter-clockwise on ties)
        cross = n[:, 0:1] * delta[:, 1:2] - n[:, 1:2] * delta[:, 0:1]
        t = np.concatenate([-n[:, 1:2], n[:, 0:1]], axis=1) * np.where(cross < 0, -1.0, 1.0)
        v = v + w * blocked * (REPULSION * n + DETOUR * t)
    return v


def behavior_policy(spec: TaskSpec, s, noise_scale: float = 0.0,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Velocity-tracking proportional controller with obstacle repulsion and Gaussian noise."""
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    s2 = s[None] if single else s
    a = (desired_velocity(spec, s2) - VELOCITY_DECAY * s2[:, 2:4]) / spec.action_scale
    a = np.clip(a, -1.0, 1.0)
    if noise_scale > 0:
        if rng is None:
            raise ValueError("a noisy behavior policy needs an rng")
        a = np.clip(a + noise_scale * rng.standard_normal(a.shape), -1.0, 1.0)
    return a[0] if single else a
