"""Minimal differentiable-network substrate (numpy, float64)."""

from promptdiff.nn.attention import AttentionBlock, softmax
from promptdiff.nn.gradcheck import check_gradients, max_relative_error, numerical_gradient, relative_error
from promptdiff.nn.layers import (
    Dense,
    LayerNorm,
    Mlp,
    activate,
    activation_grad,
    mean_pool,
    mean_pool_backward,
    sinusoidal_embed,
)
from promptdiff.nn.module import Module, frozen
from promptdiff.nn.optim import Adam, AdamState, adam_step
from promptdiff.nn.snapshot import load_snapshot, save_snapshot

__all__ = [
    "Adam", "AdamState", "AttentionBlock", "Dense", "LayerNorm", "Mlp", "Module",
    "activate", "activation_grad", "adam_step", "check_gradients", "frozen",
    "load_snapshot", "max_relative_error", "mean_pool", "mean_pool_backward",
    "numerical_gradient", "relative_error", "save_snapshot", "sinusoidal_embed", "softmax",
]
