"""Client for OpenAI-compatible ``/chat/completions`` and ``/embeddings`` endpoints."""

from __future__ import annotations

import base64
import mimetypes
import os
from pathlib import Path
from typing import Any

import httpx
import numpy as np

from .types import (
    AttachmentUnreadable,
    BackendConfig,
    BackendRequest,
    EmbeddingRequest,
    MalformedResponse,
    RateLimited,
    Transport,
    UnsupportedModality,
)


def attachment_part(locator: str) -> dict[str, Any]:
    """Encode one frame locator as an ``image_url`` content part."""
    if locator.startswith(("http://", "https://", "data:")):
        return {"type": "image_url", "image_url": {"url": locator}}
    path = Path(locator)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise AttachmentUnreadable(f"cannot read attachment {locator!r}: {exc}") from exc
    mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
    return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{base64.b64encode(raw).decode()}"}}


def build_chat_payload(config: BackendConfig, req: BackendRequest) -> dict[str, Any]:
    parts = [attachment_part(a) for a in req.attachments]
    messages = []
    last_user = max((i for i, (role, _) in enumerate(req.messages) if role == "user"), default=None)
    for i, (role, text) in enumerate(req.messages):
        if i == last_user and parts:
            # frames ride on the final user turn, ahead of the instruction
            messages.append({"role": role, "content": [*parts, {"type": "text", "text": text}]})
        else:
            messages.append({"role": role, "content": text})
    payload: dict[str, Any] = {
        "model": config.model,
        "messages": messages,
        "temperature": req.decode_params.temperature,
        "max_tokens": req.decode_params.max_tokens,
    }
    if req.decode_params.seed is not None:
        payload["seed"] = req.decode_params.seed
    return payload


class OpenAICompatBackend:
    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        if not config.base_url:
            raise ValueError(f"backend {config.name!r} has no base_url")
        self.config = config
        headers = {}
        key = os.environ.get(config.env_key_name, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = client or httpx.Client(base_url=config.base_url.rstrip("/"), headers=headers, timeout=config.timeout)

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        try:
            resp = self.client.post(path, json=payload)
        except httpx.HTTPError as exc:
            raise Transport(f"{self.config.name}: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimited(f"{self.config.name}: rate limited")
        if resp.status_code >= 500:
            raise Transport(f"{self.config.name}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise MalformedResponse(f"{self.config.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"{self.config.name}: response is not JSON") from exc

    def complete(self, req: BackendRequest) -> tuple[str, dict]:
        data = self._post("/chat/completions", build_chat_payload(self.config, req))
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"{self.config.name}: no choices[0].message.content") from exc
        if not isinstance(text, str):
            raise MalformedResponse(f"{self.config.name}: message content is not text")
        return text, dict(data.get("usage") or {})

    def embed(self, req: EmbeddingRequest) -> np.ndarray:
        if req.modality not in self.config.modalities:
            raise UnsupportedModality(f"backend {self.config.name!r} does not embed {req.modality}")
        payload: dict[str, Any] = {"model": self.config.embedding_model or self.config.model, "input": req.payload}
        if req.modality == "audio":
            # CLAP servers take a file path and a modality hint
            payload["input_type"] = "audio"
        data = self._post("/embeddings", payload)
        try:
            vec = np.asarray(data["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"{self.config.name}: no data[0].embedding") from exc
        norm = np.linalg.norm(vec)
        if vec.ndim != 1 or not np.isfinite(norm) or norm == 0:
            raise MalformedResponse(f"{self.config.name}: degenerate embedding")
        return vec / norm
