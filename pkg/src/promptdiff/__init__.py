"""Prompt-conditioned diffusion policies for multi-task offline RL, in numpy."""

from promptdiff.errors import (
    ConfigError,
    ContractError,
    EmptyInputError,
    EncoderUnavailableError,
    LoadError,
    PromptDiffError,
    ProtocolError,
    ShapeError,
    StateError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "EmptyInputError", "EncoderUnavailableError", "LoadError",
    "PromptDiffError", "ProtocolError", "ShapeError", "StateError", "__version__",
]
