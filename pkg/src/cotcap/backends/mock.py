"""Deterministic in-process backend for tests and dry runs.

Replies are a pure function of the request digest (at temperature 0), so
pipelines built on it are reproducible byte for byte. Every call is recorded in
``call_log`` with start/end timestamps, which tests use to count calls and to
check the in-flight bound.
"""

from __future__ import annotations

import hashlib
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .types import BackendConfig, BackendRequest, EmbeddingRequest, UnsupportedModality

_OBJECTS = ["dog", "man", "woman", "car", "engine", "bird", "water", "door", "train", "baby", "crowd", "wind"]
_EVENTS = [
    "barking", "speaking", "laughing", "engine revving", "chirping", "splashing",
    "door slamming", "horn honking", "crying", "cheering", "wind blowing", "footsteps",
]


def _seed(*parts: str) -> int:
    return int(hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()[:16], 16)


def is_extraction_prompt(text: str) -> bool:
    return "video_objects:" in text and "sound_events:" in text


@dataclass(frozen=True)
class CallRecord:
    key: str
    kind: str
    start: float
    end: float


class MockBackend:
    """Mock chat/embedding backend.

    ``mock_mode`` (from the backend table or the constructor):
      - ``echo``: reply with the last user message
      - ``seeded``: reply with a pseudo-random caption seeded by the request digest
      - ``auto``: like ``seeded``, but answers extraction prompts in the
        two-line ``video_objects:`` / ``sound_events:`` format
    A ``responder`` callable, when given, overrides the mode entirely.
    """

    def __init__(
        self,
        config: BackendConfig,
        responder: Callable[[BackendRequest], str] | None = None,
        *,
        mode: str | None = None,
        delay: float | None = None,
        dim: int | None = None,
    ):
        self.config = config
        self.responder = responder
        self.mode = mode or config.options.get("mock_mode", "auto")
        self.delay = float(delay if delay is not None else config.options.get("mock_delay", 0.0))
        self.dim = int(dim or config.options.get("embedding_dim", 64))
        self.call_log: list[CallRecord] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        self._counter = 0
        if self.mode not in ("echo", "seeded", "auto"):
            raise ValueError(f"unknown mock_mode {self.mode!r}")

    @property
    def calls(self) -> int:
        return len(self.call_log)

    def reset_log(self) -> None:
        with self._lock:
            self.call_log.clear()
            self.max_in_flight = 0

    def _enter(self) -> float:
        with self._lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            self._counter += 1
        return time.perf_counter()

    def _exit(self, key: str, kind: str, start: float) -> None:
        end = time.perf_counter()
        with self._lock:
            self.in_flight -= 1
            self.call_log.append(CallRecord(key, kind, start, end))

    def complete(self, req: BackendRequest) -> tuple[str, dict]:
        start = self._enter()
        try:
            if self.delay:
                time.sleep(self.delay)
            text = self.responder(req) if self.responder is not None else self._generate(req)
        finally:
            self._exit(req.key, "chat", start)
        prompt_tokens = sum(len(t.split()) for _, t in req.messages)
        return text, {"prompt_tokens": prompt_tokens, "completion_tokens": len(text.split())}

    def _generate(self, req: BackendRequest) -> str:
        last = req.last_user_text
        if self.mode == "echo":
            return last
        salt = ""
        if req.decode_params.temperature > 0 and req.decode_params.seed is None:
            salt = str(self._counter)
        rng = random.Random(_seed(req.key, salt))
        objects = rng.sample(_OBJECTS, 2)
        events = rng.sample(_EVENTS, 2)
        if self.mode == "auto" and is_extraction_prompt(last):
            return f"video_objects: {', '.join(objects)}\nsound_events: {', '.join(events)}"
        return f"a {objects[0]} {events[0]} while a {objects[1]} is {events[1]} nearby"

    def embed(self, req: EmbeddingRequest) -> np.ndarray:
        if req.modality not in self.config.modalities:
            raise UnsupportedModality(f"backend {self.config.name!r} does not embed {req.modality}")
        start = self._enter()
        try:
            rng = np.random.default_rng(_seed(req.modality, req.payload))
            v = rng.standard_normal(self.dim)
        finally:
            self._exit(req.key, "embed", start)
        return v / np.linalg.norm(v)
