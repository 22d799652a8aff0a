"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """||a - n|| / max(||a|| + ||n||, floor)."""
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(diff / max(scale, floor))


def check_gradients(f: Callable[[], float], arrays: dict[str, np.ndarray],
                    analytic: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, float]:
    """Relative error per named array between analytic and numerical gradients."""
    return {
        name: relative_error(analytic[name], numerical_gradient(f, x, h))
        for name, x in arrays.items()
    }


def max_relative_error(f: Callable[[], float], arrays: dict[str, np.ndarray],
                       analytic: dict[str, np.ndarray], h: float = 1e-5) -> float:
    errs = check_gradients(f, arrays, analytic, h)
    return max(errs.values()) if errs else 0.0
