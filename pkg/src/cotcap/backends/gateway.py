from __future__ import annotations

import logging
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Generic, Iterable, Sequence, TypeVar

import numpy as np

from ..models import VideoRef
from .cache import ResponseCache
from .mock import MockBackend
from .openai_compat import OpenAICompatBackend
from .types import (
    RETRYABLE,
    BackendConfig,
    BackendRequest,
    BackendResponse,
    EmbeddingRequest,
    MalformedResponse,
    UnknownBackend,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def frame_indices(frame_count: int, k: int) -> list[int]:
    """Uniform temporal sample: floor(i * F / k) for i in 0..k-1."""
    if frame_count < 1 or k < 1:
        raise ValueError("frame_count and k must be >= 1")
    return [i * frame_count // k for i in range(k)]


_IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".webp", ".bmp"}


def video_attachments(video: VideoRef, k: int) -> tuple[str, ...]:
    """Frame locators handed to a VLM for ``video``.

    A directory ``uri`` is read as a pre-extracted frame set; any other uri is
    opaque and gets ``#frame=<idx>`` fragments. Without a frame count the uri
    is passed through whole.
    """
    if video.frame_count is None:
        return (video.uri or video.id,)
    idx = frame_indices(video.frame_count, k)
    root = Path(video.uri) if video.uri else None
    if root is not None and root.is_dir():
        frames = sorted(p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
        if frames:
            return tuple(str(frames[min(i, len(frames) - 1)]) for i in idx)
    base = video.uri or video.id
    return tuple(f"{base}#frame={i}" for i in idx)


@dataclass(frozen=True)
class Outcome(Generic[R]):
    """One slot of an ordered concurrent map: a value or the error that replaced it."""

    value: R | None = None
    error: BaseException | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def map_ordered(fn: Callable[[T], R], items: Sequence[T], limit: int) -> list[Outcome[R]]:
    """Apply ``fn`` to every item with at most ``limit`` calls in flight.

    Results come back in input order; an exception in one item fills only that
    item's slot.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")

    def run(item: T) -> Outcome[R]:
        try:
            return Outcome(value=fn(item))
        except Exception as exc:  # isolated per item
            return Outcome(error=exc)

    if limit == 1:
        return [run(it) for it in items]
    with ThreadPoolExecutor(max_workers=limit) as pool:
        return list(pool.map(run, items))


class Gateway:
    """Uniform access to configured backends, with caching, retries and per-backend limits."""

    def __init__(
        self,
        configs: Iterable[BackendConfig] = (),
        cache_dir: str | Path | None = None,
        *,
        use_cache: bool = True,
        attempts: int = 3,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.configs: dict[str, BackendConfig] = {}
        self.backends: dict[str, Any] = {}
        self._permits: dict[str, threading.BoundedSemaphore] = {}
        self.cache = ResponseCache(cache_dir) if (cache_dir is not None and use_cache) else None
        self.attempts = attempts
        self.backoff = backoff
        self.sleep = sleep
        self.rng = rng or random.Random()
        self.network_calls = 0
        self.cache_hits = 0
        self._stats_lock = threading.Lock()
        for cfg in configs:
            self.register(cfg)

    def register(self, config: BackendConfig, backend: Any = None) -> Any:
        if backend is None:
            backend = MockBackend(config) if config.kind == "mock" else OpenAICompatBackend(config)
        self.configs[config.name] = config
        self.backends[config.name] = backend
        self._permits[config.name] = threading.BoundedSemaphore(config.max_concurrency)
        return backend

    def config(self, backend_id: str) -> BackendConfig:
        try:
            return self.configs[backend_id]
        except KeyError:
            raise UnknownBackend(f"backend {backend_id!r} is not configured") from None

    def backend(self, backend_id: str) -> Any:
        self.config(backend_id)
        return self.backends[backend_id]

    def _count(self, *, network: int = 0, hits: int = 0) -> None:
        with self._stats_lock:
            self.network_calls += network
            self.cache_hits += hits

    def _with_retries(self, backend_id: str, call: Callable[[], T]) -> tuple[T, int]:
        delay = self.backoff
        for attempt in range(1, self.attempts + 1):
            try:
                with self._permits[backend_id]:
                    self._count(network=1)
                    return call(), attempt
            except RETRYABLE as exc:
                if attempt == self.attempts:
                    raise
                wait = delay * (1 + self.rng.random())
                logger.warning("%s: attempt %d/%d failed (%s); retrying in %.1fs", backend_id, attempt, self.attempts, exc, wait)
                self.sleep(wait)
                delay *= 2
        raise AssertionError("unreachable")

    def _cached(self, key: str, compute: Callable[[], dict[str, Any]]) -> tuple[dict[str, Any], bool]:
        if self.cache is None:
            return compute(), False
        entry = self.cache.get(key)
        if entry is not None:
            self._count(hits=1)
            return entry, True
        with self.cache.lock_for(key):
            entry = self.cache.get(key)
            if entry is not None:
                self._count(hits=1)
                return entry, True
            entry = compute()
            self.cache.put(key, entry)
        return entry, False

    def complete(self, req: BackendRequest) -> BackendResponse:
        backend = self.backend(req.backend_id)
        attempts = 0

        def compute() -> dict[str, Any]:
            nonlocal attempts
            (text, usage), attempts = self._with_retries(req.backend_id, lambda: backend.complete(req))
            if not isinstance(text, str):
                raise MalformedResponse(f"{req.backend_id}: reply is not text")
            return {"text": text, "backend_id": req.backend_id, "key": req.key, "usage": usage}

        entry, hit = self._cached(req.key, compute)
        return BackendResponse(
            text=entry["text"], backend_id=req.backend_id, key=req.key, usage=entry.get("usage", {}),
            cache_hit=hit, attempts=0 if hit else attempts,
        )

    def embed(self, req: EmbeddingRequest) -> np.ndarray:
        backend = self.backend(req.backend_id)

        def compute() -> dict[str, Any]:
            vec, _ = self._with_retries(req.backend_id, lambda: backend.embed(req))
            return {"vector": [float(x) for x in vec], "backend_id": req.backend_id, "key": req.key}

        entry, _ = self._cached(req.key, compute)
        v = np.asarray(entry["vector"], dtype=float)
        return v / np.linalg.norm(v)

    def map_concurrent(self, requests: Sequence[BackendRequest], limit: int) -> list[Outcome[BackendResponse]]:
        return map_ordered(self.complete, requests, limit)

    def request(self, backend_id: str, text: str, attachments: Sequence[str] = ()) -> BackendRequest:
        """Single user-turn request using the backend's configured decode params."""
        return BackendRequest.user(backend_id, text, attachments, self.config(backend_id).decode_params)

    def attachments_for(self, backend_id: str, video: VideoRef) -> tuple[str, ...]:
        return video_attachments(video, self.config(backend_id).sample_frames)
