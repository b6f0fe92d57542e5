from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

MODALITIES = ("text", "audio")


class BackendError(Exception):
    """Base class for failures talking to a model backend."""


class UnknownBackend(BackendError):
    pass


class Transport(BackendError):
    """Network or server failure; raised once retries are exhausted."""


class RateLimited(Transport):
    pass


class MalformedResponse(BackendError):
    pass


class AttachmentUnreadable(BackendError):
    pass


class UnsupportedModality(BackendError):
    pass


# Errors worth another attempt. Everything else fails fast.
RETRYABLE = (Transport,)


def canonical_digest(payload: Any) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens, "seed": self.seed}


@dataclass(frozen=True)
class BackendRequest:
    backend_id: str
    messages: tuple[tuple[str, str], ...]
    attachments: tuple[str, ...] = ()
    decode_params: DecodeParams = field(default_factory=DecodeParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple((str(r), str(t)) for r, t in self.messages))
        object.__setattr__(self, "attachments", tuple(self.attachments))
        if not self.messages:
            raise ValueError("BackendRequest needs at least one message")

    @classmethod
    def user(cls, backend_id: str, text: str, attachments=(), decode_params: DecodeParams | None = None) -> BackendRequest:
        return cls(backend_id, (("user", text),), tuple(attachments), decode_params or DecodeParams())

    @property
    def last_user_text(self) -> str:
        for role, text in reversed(self.messages):
            if role == "user":
                return text
        return self.messages[-1][1]

    @property
    def key(self) -> str:
        return canonical_digest(
            {
                "kind": "chat",
                "backend_id": self.backend_id,
                "messages": [list(m) for m in self.messages],
                "attachments": list(self.attachments),
                "decode_params": self.decode_params.to_dict(),
            }
        )


@dataclass(frozen=True)
class BackendResponse:
    text: str
    backend_id: str
    key: str
    usage: dict[str, Any] = field(default_factory=dict)
    cache_hit: bool = False
    attempts: int = 1

    def to_cache(self) -> dict[str, Any]:
        return {"text": self.text, "backend_id": self.backend_id, "key": self.key, "usage": self.usage}


@dataclass(frozen=True)
class EmbeddingRequest:
    backend_id: str
    modality: str
    payload: str

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise UnsupportedModality(f"unknown modality {self.modality!r}")
        if not isinstance(self.payload, str) or not self.payload:
            raise ValueError(f"{self.modality} embedding payload must be a non-empty string")

    @property
    def key(self) -> str:
        return canonical_digest(
            {"kind": "embed", "backend_id": self.backend_id, "modality": self.modality, "payload": self.payload}
        )


@dataclass(frozen=True)
class BackendConfig:
    """One ``[backends.<name>]`` table."""

    name: str
    kind: str = "openai"
    base_url: str = ""
    model: str = ""
    api_key_env: str = ""
    sample_frames: int = 16
    max_concurrency: int = 8
    timeout: float = 60.0
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int | None = None
    modalities: tuple[str, ...] = ("text",)
    embedding_model: str = ""
    options: dict[str, Any] = field(default_factory=dict)

    @property
    def env_key_name(self) -> str:
        if self.api_key_env:
            return self.api_key_env
        return self.name.upper().replace("-", "_").replace(".", "_") + "_API_KEY"

    @property
    def decode_params(self) -> DecodeParams:
        return DecodeParams(self.temperature, self.max_tokens, self.seed)

    @classmethod
    def from_table(cls, name: str, table: dict[str, Any]) -> BackendConfig:
        known = {f for f in cls.__dataclass_fields__ if f not in ("name", "options")}
        kwargs = {k: v for k, v in table.items() if k in known}
        if "modalities" in kwargs:
            kwargs["modalities"] = tuple(kwargs["modalities"])
        options = {k: v for k, v in table.items() if k not in known}
        cfg = cls(name=name, options=options, **kwargs)
        if cfg.kind not in ("openai", "mock"):
            raise ValueError(f"backend {name!r}: kind must be 'openai' or 'mock'")
        if cfg.sample_frames < 1 or cfg.max_concurrency < 1:
            raise ValueError(f"backend {name!r}: sample_frames and max_concurrency must be >= 1")
        return cfg
