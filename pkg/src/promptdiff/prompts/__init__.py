from promptdiff.prompts.external import ClientConfig, ExternalTextEncoder, external_encode
from promptdiff.prompts.text import (
    INSTRUCTION,
    HashTextEncoder,
    ProjectionHead,
    TextEncoder,
    TextPrompt,
    embed_text,
    hash_text_encode,
    parse_text_prompt,
    serialize_text_prompt,
)
from promptdiff.prompts.trajectory import (
    TrajectoryEncoder,
    TrajectoryPrompt,
    embed_trajectory,
    truncate_indices,
    truncate_prompt,
)

__all__ = [
    "INSTRUCTION", "ClientConfig", "ExternalTextEncoder", "HashTextEncoder", "ProjectionHead",
    "TextEncoder", "TextPrompt", "TrajectoryEncoder", "TrajectoryPrompt", "embed_text",
    "embed_trajectory", "external_encode", "hash_text_encode", "parse_text_prompt",
    "serialize_text_prompt", "truncate_indices", "truncate_prompt",
]
