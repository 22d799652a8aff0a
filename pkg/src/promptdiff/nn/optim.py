from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from promptdiff.errors import ShapeError


@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        return out

    def hyper(self) -> dict:
        return {"learning_rate": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps, "step": self.step}

    @classmethod
    def restore(cls, hyper: dict, arrays: dict[str, np.ndarray]) -> "AdamState":
        state = cls(**hyper)
        for key, a in arrays.items():
            kind, name = key.split(".", 1)
            getattr(state, kind)[name] = np.array(a, dtype=np.float64)
        return state


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if name in state.m and state.m[name].shape != p.shape:
            raise ShapeError(f"{name}: moment buffer shape {state.m[name].shape} != {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    """Adam over every parameter of one or more modules (one learning rate)."""

    def __init__(self, modules, learning_rate: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.modules = dict(modules)
        self.state = AdamState(learning_rate, beta1, beta2, eps)

    def _collect(self, getter):
        out = {}
        for prefix, module in self.modules.items():
            for name, a in getter(module)(prefix + "."):
                out[name] = a
        return out

    def params(self) -> dict[str, np.ndarray]:
        return self._collect(lambda m: m.named_parameters)

    def grads(self) -> dict[str, np.ndarray]:
        return self._collect(lambda m: m.named_grads)

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        adam_step(self.params(), self.grads() if grads is None else grads, self.state)

    def zero_grad(self) -> None:
        for module in self.modules.values():
            module.zero_grad()
