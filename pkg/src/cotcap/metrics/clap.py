from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..backends import EmbeddingRequest, Gateway
from .items import EvalItem, MissingAudioRef, check_items


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class ClapResult:
    corpus: float
    per_item: list[float]


def mean_cosine(pairs: Sequence[tuple[Sequence[float], Sequence[float]]]) -> ClapResult:
    scores = [cosine(u, v) for u, v in pairs]
    return ClapResult(float(np.mean(scores)) if scores else 0.0, scores)


def clap_similarity(
    items: Sequence[EvalItem],
    gateway: Gateway,
    text_backend: str,
    audio_backend: str | None = None,
    mode: str = "audio",
) -> ClapResult:
    """Cosine between the candidate's text embedding and the item's audio
    embedding (``mode="audio"``) or its first reference's text embedding
    (``mode="text"``, for runs without audio files)."""
    items = check_items(items)
    pairs = []
    for it in items:
        cand = gateway.embed(EmbeddingRequest(text_backend, "text", it.candidate or " "))
        if mode == "audio":
            if not it.audio_ref:
                raise MissingAudioRef(f"item {it.item_id!r} has no audio_ref")
            other = gateway.embed(EmbeddingRequest(audio_backend or text_backend, "audio", it.audio_ref))
        elif mode == "text":
            other = gateway.embed(EmbeddingRequest(text_backend, "text", it.references[0]))
        else:
            raise ValueError(f"unknown CLAP mode {mode!r}")
        pairs.append((cand, other))
    return mean_cosine(pairs)
