"""Model capabilities behind one interface: chat, embeddings, image-to-HTML, log-probabilities."""

from .base import (
    JUDGE_SAMPLING,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    ImagePart,
    Message,
    Provider,
    ProviderConfig,
    RetryPolicy,
    Role,
    Sampling,
    SequenceScore,
    TextPart,
    call_with_retry,
    sequence_logprob,
    yes_probability,
)
from .html import prune_html
from .http import HttpProvider
from .mock import MockProvider
from .replay import ReplayCache, ReplayProvider

__all__ = [
    "JUDGE_SAMPLING",
    "ChatRequest",
    "ChatResponse",
    "EmbeddingVector",
    "HttpProvider",
    "ImagePart",
    "Message",
    "MockProvider",
    "Provider",
    "ProviderConfig",
    "ReplayCache",
    "ReplayProvider",
    "RetryPolicy",
    "Role",
    "Sampling",
    "SequenceScore",
    "TextPart",
    "call_with_retry",
    "prune_html",
    "sequence_logprob",
    "yes_probability",
]
