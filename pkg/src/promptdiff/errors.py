"""Exception types raised across the package."""


class PromptDiffError(Exception):
    """Base class for all package errors."""


class ShapeError(PromptDiffError, ValueError):
    pass


class StateError(PromptDiffError, RuntimeError):
    """An operation was called in the wrong state (e.g. backward before forward)."""


class ConfigError(PromptDiffError, ValueError):
    pass


class EmptyInputError(PromptDiffError, ValueError):
    pass


class LoadError(PromptDiffError, IOError):
    pass


class EncoderUnavailableError(PromptDiffError, RuntimeError):
    pass


class ProtocolError(PromptDiffError, ValueError):
    pass


class ContractError(PromptDiffError, TypeError):
    """An argument does not satisfy an interface contract (e.g. a non-differentiable source)."""
