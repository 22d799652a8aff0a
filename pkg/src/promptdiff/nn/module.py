"""Base class for networks with explicit forward/backward passes.

Every forward call made with ``cache=True`` pushes the values its backward
pass needs onto a per-instance tape; ``backward`` pops them in LIFO order.
That lets one network be applied several times (as in a diffusion reverse
chain) and then differentiated in reverse order of application.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

import numpy as np

from promptdiff.errors import ShapeError, StateError


class Module:
    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.trainable = True
        self._tape: list = []

    # -- structure -------------------------------------------------------
    def children(self) -> dict[str, "Module"]:
        return {}

    def add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, p in self.params.items():
            yield prefix + name, p
        for cname, child in self.children().items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_grads(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, g in self.grads.items():
            yield prefix + name, g
        for cname, child in self.children().items():
            yield from child.named_grads(f"{prefix}{cname}.")

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def gradients(self) -> dict[str, np.ndarray]:
        return dict(self.named_grads())

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    # -- state -----------------------------------------------------------
    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)
        for child in self.children().values():
            child.zero_grad()

    def clear_tape(self) -> None:
        self._tape.clear()
        for child in self.children().values():
            child.clear_tape()

    def tape_depth(self) -> int:
        return len(self._tape)

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        for child in self.children().values():
            child.set_trainable(flag)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy values in place so that optimizer references stay valid."""
        own = self.parameters()
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ShapeError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, p in own.items():
            v = np.asarray(state[name], dtype=np.float64)
            if v.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {v.shape}")
        for name, p in own.items():
            np.copyto(p, state[name])

    def copy_from(self, other: "Module") -> None:
        self.load_state_dict(other.state_dict())

    # -- tape helpers ----------------------------------------------------
    def _push(self, item) -> None:
        self._tape.append(item)

    def _pop(self):
        if not self._tape:
            raise StateError(f"{type(self).__name__}.backward called without a cached forward pass")
        return self._tape.pop()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


@contextmanager
def frozen(*modules: Module):
    """Temporarily stop the given modules from accumulating parameter gradients.

    Input gradients still flow through them.
    """
    previous = [m.trainable for m in modules]
    for m in modules:
        m.set_trainable(False)
    try:
        yield
    finally:
        for m, flag in zip(modules, previous):
            m.set_trainable(flag)
