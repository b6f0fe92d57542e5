from .cache import ResponseCache
from .gateway import Gateway, Outcome, frame_indices, map_ordered, video_attachments
from .mock import MockBackend
from .openai_compat import OpenAICompatBackend
from .types import (
    AttachmentUnreadable,
    BackendConfig,
    BackendError,
    BackendRequest,
    BackendResponse,
    DecodeParams,
    EmbeddingRequest,
    MalformedResponse,
    RateLimited,
    Transport,
    UnknownBackend,
    UnsupportedModality,
)

__all__ = [
    "AttachmentUnreadable",
    "BackendConfig",
    "BackendError",
    "BackendRequest",
    "BackendResponse",
    "DecodeParams",
    "EmbeddingRequest",
    "Gateway",
    "MalformedResponse",
    "MockBackend",
    "OpenAICompatBackend",
    "Outcome",
    "RateLimited",
    "ResponseCache",
    "Transport",
    "UnknownBackend",
    "UnsupportedModality",
    "frame_indices",
    "map_ordered",
    "video_attachments",
]
