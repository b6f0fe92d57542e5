"""Record types shared across the pipeline, plus JSONL persistence helpers.

Every persisted record is one JSON object per line (UTF-8). Field names are
stable and consumed by external tooling, so keep ``to_dict`` keys in sync with
the README schema section.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MODES = ("direct", "two_stage", "cot_chained")
STAGE_COUNTS = {"direct": 1, "two_stage": 2, "cot_chained": 3}
STRATEGIES = ("single_stage", "two_stage")

# LoRA settings the reference SFT runs used; carried as inert export metadata.
RECOMMENDED_ADAPTER_CONFIG = {"rank": 128, "alpha": 256, "learning_rate": 2e-5}


class RecordError(ValueError):
    """A record violates one of its field invariants."""


@dataclass(frozen=True)
class VideoRef:
    id: str
    uri: str = ""
    frame_count: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise RecordError("VideoRef.id must be a non-empty string")
        if self.frame_count is not None and (
            isinstance(self.frame_count, bool) or int(self.frame_count) != self.frame_count or self.frame_count < 1
        ):
            raise RecordError(f"VideoRef {self.id}: frame_count must be >= 1, got {self.frame_count!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "uri": self.uri, "frame_count": self.frame_count}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> VideoRef:
        return cls(id=d["id"], uri=d.get("uri", ""), frame_count=d.get("frame_count"))


@dataclass(frozen=True)
class PairRecord:
    """One corpus item: a video and its ground-truth audio caption."""

    video: VideoRef
    audio_caption: str
    split: str = "train"

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise RecordError(f"PairRecord {self.video.id}: split must be one of {SPLITS}, got {self.split!r}")

    @property
    def id(self) -> str:
        return self.video.id

    def to_dict(self) -> dict[str, Any]:
        return {"video": self.video.to_dict(), "audio_caption": self.audio_caption, "split": self.split}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PairRecord:
        video = d["video"]
        if isinstance(video, str):
            video = {"id": video}
        return cls(video=VideoRef.from_dict(video), audio_caption=d["audio_caption"], split=d.get("split", "train"))


@dataclass(frozen=True)
class CoTTriple:
    pair_id: str
    video_caption: str
    video_objects: str
    sound_events: str
    audio_caption: str

    def __post_init__(self) -> None:
        for name in ("video_caption", "video_objects", "sound_events", "audio_caption"):
            if not getattr(self, name).strip():
                raise RecordError(f"CoTTriple {self.pair_id}: {name} is empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "pair_id": self.pair_id,
            "video_caption": self.video_caption,
            "video_objects": self.video_objects,
            "sound_events": self.sound_events,
            "audio_caption": self.audio_caption,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CoTTriple:
        return cls(**{k: d[k] for k in ("pair_id", "video_caption", "video_objects", "sound_events", "audio_caption")})


@dataclass(frozen=True)
class StageOutput:
    stage: str
    prompt_digest: str
    output_text: str
    prompt_text: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "prompt_digest": self.prompt_digest,
            "output_text": self.output_text,
            "prompt_text": self.prompt_text,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StageOutput:
        return cls(d["stage"], d["prompt_digest"], d["output_text"], d.get("prompt_text", ""))


@dataclass(frozen=True)
class InferenceResult:
    pair_id: str
    mode: str
    stage_outputs: tuple[StageOutput, ...]
    final_caption: str
    backend_ids: tuple[str, ...]
    decode_params: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise RecordError(f"unknown inference mode {self.mode!r}")
        object.__setattr__(self, "stage_outputs", tuple(self.stage_outputs))
        object.__setattr__(self, "backend_ids", tuple(self.backend_ids))
        if len(self.stage_outputs) != STAGE_COUNTS[self.mode]:
            raise RecordError(
                f"{self.mode} result for {self.pair_id} needs {STAGE_COUNTS[self.mode]} stages, "
                f"got {len(self.stage_outputs)}"
            )
        if self.final_caption != self.stage_outputs[-1].output_text:
            raise RecordError(f"{self.pair_id}: final_caption must equal the last stage output")

    def to_dict(self) -> dict[str, Any]:
        return {
            "pair_id": self.pair_id,
            "mode": self.mode,
            "stage_outputs": [s.to_dict() for s in self.stage_outputs],
            "final_caption": self.final_caption,
            "backend_ids": list(self.backend_ids),
            "decode_params": dict(self.decode_params),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> InferenceResult:
        return cls(
            pair_id=d["pair_id"],
            mode=d["mode"],
            stage_outputs=tuple(StageOutput.from_dict(s) for s in d["stage_outputs"]),
            final_caption=d["final_caption"],
            backend_ids=tuple(d["backend_ids"]),
            decode_params=d.get("decode_params", {}),
        )


@dataclass(frozen=True)
class MetricReport:
    per_item: dict[str, dict[str, float]]
    corpus: dict[str, float]
    metric_config_digest: str

    def __post_init__(self) -> None:
        keysets = {frozenset(scores) for scores in self.per_item.values()}
        if len(keysets) > 1:
            raise RecordError("per-item metric maps have differing key sets")
        for scores in [*self.per_item.values(), self.corpus]:
            for name, value in scores.items():
                if not math.isfinite(value):
                    raise RecordError(f"non-finite score for {name}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric_config_digest": self.metric_config_digest,
            "corpus": dict(self.corpus),
            "per_item": {k: dict(v) for k, v in self.per_item.items()},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MetricReport:
        return cls(per_item=d["per_item"], corpus=d["corpus"], metric_config_digest=d["metric_config_digest"])


@dataclass(frozen=True)
class ExportedFile:
    path: str
    records: int


@dataclass(frozen=True)
class SFTExportManifest:
    strategy: str
    datasets: tuple[ExportedFile, ...]
    recommended_adapter_config: dict[str, Any] = field(default_factory=lambda: dict(RECOMMENDED_ADAPTER_CONFIG))
    extraction_policy: str = "reprompt-once-then-drop"
    config_digest: str = ""

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise RecordError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "datasets": [{"path": f.path, "records": f.records} for f in self.datasets],
            "recommended_adapter_config": dict(self.recommended_adapter_config),
            "extraction_policy": self.extraction_policy,
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SFTExportManifest:
        return cls(
            strategy=d["strategy"],
            datasets=tuple(ExportedFile(f["path"], f["records"]) for f in d["datasets"]),
            recommended_adapter_config=d["recommended_adapter_config"],
            extraction_policy=d.get("extraction_policy", ""),
            config_digest=d.get("config_digest", ""),
        )


@dataclass
class ValidationSummary:
    split_counts: dict[str, int]
    duplicate_ids: list[str]
    empty_captions: list[str]

    @property
    def ok(self) -> bool:
        return not self.duplicate_ids and not self.empty_captions

    @property
    def total(self) -> int:
        return sum(self.split_counts.values())


def validate_corpus(records: Iterable[PairRecord]) -> ValidationSummary:
    """Report split counts, duplicated ids and blank captions. Never raises."""
    counts = {s: 0 for s in SPLITS}
    seen: Counter[str] = Counter()
    empty = []
    for rec in records:
        counts[rec.split] += 1
        seen[rec.id] += 1
        if not rec.audio_caption.strip():
            empty.append(rec.id)
    dupes = sorted(k for k, n in seen.items() if n > 1)
    return ValidationSummary(split_counts=counts, duplicate_ids=dupes, empty_captions=empty)


# -- JSONL -------------------------------------------------------------------


def dumps(record: Any) -> str:
    payload = record.to_dict() if hasattr(record, "to_dict") else record
    return json.dumps(payload, ensure_ascii=False, sort_keys=False)


def iter_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                # a torn final line from an interrupted append is expected
                logger.warning("%s:%d: skipping unparseable line", path, lineno)


def read_jsonl(path: str | Path, cls: type | None = None) -> list[Any]:
    rows = list(iter_jsonl(path))
    return [cls.from_dict(r) for r in rows] if cls is not None else rows


def write_jsonl(path: str | Path, records: Iterable[Any]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    tmp.replace(path)
    return n


def count_lines(path: str | Path) -> int:
    with open(path, encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip())


def load_corpus(path: str | Path) -> list[PairRecord]:
    return read_jsonl(path, PairRecord)
