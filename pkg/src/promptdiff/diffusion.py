"""DDPM machinery over action vectors: schedule, forward noising, reverse steps.

Steps are indexed 1..K; index 0 of every schedule array holds the
``alpha_bar_0 = 1`` convention so that ``schedule.alpha_bar[k]`` reads
naturally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from promptdiff.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    K: int
    beta: np.ndarray       # beta[k] for k = 1..K; beta[0] = 0
    alpha: np.ndarray      # alpha[k] = 1 - beta[k]; alpha[0] = 1
    alpha_bar: np.ndarray  # cumulative product; alpha_bar[0] = 1
    sigma: np.ndarray      # posterior std; sigma[1] = 0

    def check_step(self, k) -> None:
        k = np.asarray(k)
        if np.any(k < 1) or np.any(k > self.K):
            raise IndexError(f"diffusion step must be in [1, {self.K}], got {k}")


def build_schedule(K: int = 5, beta_min: float = 0.1, beta_max: float = 10.0) -> NoiseSchedule:
    """Variance-preserving exponential schedule.

    alpha_k = exp(-beta_min / K - (beta_max - beta_min) * (2k - 1) / (2 K^2))
    """
    if int(K) != K or K < 1:
        raise ConfigError(f"K must be a positive integer, got {K}")
    if not (0.0 < beta_min < beta_max):
        raise ConfigError(f"need 0 < beta_min < beta_max, got {beta_min}, {beta_max}")
    K = int(K)
    k = np.arange(1, K + 1, dtype=np.float64)
    alpha_1k = np.exp(-beta_min / K - (beta_max - beta_min) * (2.0 * k - 1.0) / (2.0 * K * K))
    alpha = np.concatenate([[1.0], alpha_1k])
    beta = 1.0 - alpha
    alpha_bar = np.cumprod(alpha)
    sigma = np.zeros(K + 1)
    # sigma_k^2 = beta_k (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k); zero at k = 1
    sigma[1:] = np.sqrt(beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]))
    for arr in (beta, alpha, alpha_bar, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(K, beta, alpha, alpha_bar, sigma)


def _step_column(schedule: NoiseSchedule, values: np.ndarray, k, ndim: int):
    """Schedule values at k, shaped to broadcast over a (batch, dim) array."""
    schedule.check_step(k)
    v = values[np.asarray(k)]
    if np.ndim(v) == 1 and ndim == 2:
        return v[:, None]
    return v


def forward_noise(schedule: NoiseSchedule, a0, k, eps) -> np.ndarray:
    """sqrt(abar_k) a0 + sqrt(1 - abar_k) eps; ``k`` scalar or one per batch row."""
    a0 = np.asarray(a0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if a0.shape != eps.shape:
        raise ShapeError(f"action shape {a0.shape} != noise shape {eps.shape}")
    ab = _step_column(schedule, schedule.alpha_bar, k, a0.ndim)
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def reverse_coefficients(schedule: NoiseSchedule, k, ndim: int = 1):
    """(1/sqrt(alpha_k), (1 - alpha_k) / sqrt(1 - abar_k)) at step k."""
    a = _step_column(schedule, schedule.alpha, k, ndim)
    ab = _step_column(schedule, schedule.alpha_bar, k, ndim)
    return 1.0 / np.sqrt(a), (1.0 - a) / np.sqrt(1.0 - ab)


def reverse_mean(schedule: NoiseSchedule, a_k, eps_pred, k) -> np.ndarray:
    a_k = np.asarray(a_k, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if a_k.shape != eps_pred.shape:
        raise ShapeError(f"action shape {a_k.shape} != predicted-noise shape {eps_pred.shape}")
    inv_sqrt_alpha, coef = reverse_coefficients(schedule, k, a_k.ndim)
    return inv_sqrt_alpha * (a_k - coef * eps_pred)


def reverse_step(schedule: NoiseSchedule, a_k, eps_pred, k, noise) -> np.ndarray:
    """One ancestral step mu + sigma_k * noise (unclipped)."""
    mu = reverse_mean(schedule, a_k, eps_pred, k)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != mu.shape:
        raise ShapeError(f"noise shape {noise.shape} != action shape {mu.shape}")
    sigma = _step_column(schedule, schedule.sigma, k, mu.ndim)
    return mu + sigma * noise


def ddpm_residual(eps_true, eps_pred) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient w.r.t. ``eps_pred``."""
    eps_true = np.asarray(eps_true, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if eps_true.shape != eps_pred.shape:
        raise ShapeError(f"shapes differ: {eps_true.shape} vs {eps_pred.shape}")
    diff = eps_pred - eps_true
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n
