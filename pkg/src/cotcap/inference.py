"""Direct, two-stage and chained (objects -> events -> caption) inference."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .backends import Gateway, map_ordered
from .models import InferenceResult, PairRecord, StageOutput, VideoRef, iter_jsonl
from .prompts import PromptTemplate, default_templates, for_caption_grounding, render

logger = logging.getLogger(__name__)

MODE_ALIASES = {"direct": "direct", "two_stage": "two_stage", "two-stage": "two_stage", "cot": "cot_chained", "cot_chained": "cot_chained"}
INFERENCES_FILE = "inferences.jsonl"


class EmptyIntermediate(RuntimeError):
    """A stage produced no text, so the next stage has nothing to condition on."""


@dataclass(frozen=True)
class Backends:
    """Backend ids for a run. ``llm`` serves the text-only stages; for chained
    inference ``vlm`` runs the subtasks when grounded on the video."""

    vlm: str
    llm: str | None = None


class Runner:
    def __init__(self, gateway: Gateway, templates: Mapping[str, PromptTemplate] | None = None):
        self.gateway = gateway
        self.templates = dict(templates or default_templates())

    def _stage(self, name: str, backend_id: str, prompt_text: str, video: VideoRef | None) -> StageOutput:
        attachments = self.gateway.attachments_for(backend_id, video) if video is not None else ()
        resp = self.gateway.complete(self.gateway.request(backend_id, prompt_text, attachments))
        out = resp.text.rstrip()
        return StageOutput(name, _digest(prompt_text), out, prompt_text)

    def _decode(self, *backend_ids: str) -> dict[str, Any]:
        return {b: self.gateway.config(b).decode_params.to_dict() for b in backend_ids}

    def infer_direct(self, video: VideoRef, vlm: str) -> InferenceResult:
        prompt = render(self.templates["direct_audio"], {})
        stage = self._stage("direct_audio", vlm, prompt.text, video)
        return InferenceResult(video.id, "direct", (stage,), stage.output_text, (vlm,), self._decode(vlm))

    def video_caption(self, video: VideoRef, vlm: str) -> StageOutput:
        prompt = render(self.templates["video_caption"], {})
        stage = self._stage("video_caption", vlm, prompt.text, video)
        if not stage.output_text.strip():
            raise EmptyIntermediate(f"{video.id}: empty video caption from {vlm}")
        return stage

    def infer_two_stage(self, video: VideoRef, vlm: str, llm: str) -> InferenceResult:
        first = self.video_caption(video, vlm)
        prompt = render(for_caption_grounding(self.templates["direct_audio"]), {"video_caption": first.output_text})
        second = self._stage("direct_audio", llm, prompt.text, None)
        return InferenceResult(
            video.id, "two_stage", (first, second), second.output_text, (vlm, llm), self._decode(vlm, llm)
        )

    def infer_cot(
        self, video: VideoRef, backend: str, grounding: str = "video", vlm: str | None = None
    ) -> InferenceResult:
        """Three chained subtasks; each prompt carries the previous subtask's output.

        The final subtask sees the sound events but not the object list. With
        ``grounding="video_caption"``, ``vlm`` first captions the video and the
        caption stands in for the frames in every subtask prompt; its transcript
        is kept in ``decode_params['video_caption']`` since the result has
        exactly three stages.
        """
        templates = {k: self.templates[f"subtask_{k}"] for k in ("v2o", "o2e", "e2c")}
        extra: dict[str, str] = {}
        attach: VideoRef | None = video
        backend_ids: tuple[str, ...] = (backend,)
        caption_stage = None
        if grounding == "video_caption":
            if vlm is None:
                raise ValueError("caption grounding needs a VLM to caption the video")
            caption_stage = self.video_caption(video, vlm)
            templates = {k: for_caption_grounding(t) for k, t in templates.items()}
            extra = {"video_caption": caption_stage.output_text}
            attach = None
            backend_ids = (vlm, backend)
        elif grounding != "video":
            raise ValueError(f"unknown grounding {grounding!r}")

        def run(key: str, bindings: dict[str, str]) -> StageOutput:
            prompt = render(templates[key], {**extra, **bindings})
            return self._stage(f"subtask_{key}", backend, prompt.text, attach)

        s1 = run("v2o", {})
        _require(s1, video.id)
        s2 = run("o2e", {"video_objects": s1.output_text})
        _require(s2, video.id)
        s3 = run("e2c", {"sound_events": s2.output_text})
        decode = self._decode(*backend_ids)
        if caption_stage is not None:
            decode["video_caption"] = caption_stage.to_dict()
        decode["grounding"] = grounding
        return InferenceResult(video.id, "cot_chained", (s1, s2, s3), s3.output_text, backend_ids, decode)

    def infer(self, pair: PairRecord, mode: str, backends: Backends, grounding: str = "video") -> InferenceResult:
        mode = MODE_ALIASES.get(mode, mode)
        if mode == "direct":
            return self.infer_direct(pair.video, backends.vlm)
        if mode == "two_stage":
            if backends.llm is None:
                raise ValueError("two-stage inference needs an LLM backend")
            return self.infer_two_stage(pair.video, backends.vlm, backends.llm)
        if mode == "cot_chained":
            if grounding == "video_caption":
                return self.infer_cot(pair.video, backends.llm or backends.vlm, grounding, vlm=backends.vlm)
            return self.infer_cot(pair.video, backends.vlm, grounding)
        raise ValueError(f"unknown mode {mode!r}")


def _require(stage: StageOutput, item: str) -> None:
    if not stage.output_text.strip():
        raise EmptyIntermediate(f"{item}: {stage.stage} produced empty output")


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ItemError:
    pair_id: str
    mode: str
    error: str

    def to_dict(self) -> dict[str, Any]:
        return {"pair_id": self.pair_id, "mode": self.mode, "error": self.error}


def run_split(
    corpus: Sequence[PairRecord],
    mode: str,
    backends: Backends,
    gateway: Gateway,
    *,
    limit: int = 8,
    grounding: str = "video",
    templates: Mapping[str, PromptTemplate] | None = None,
    out_path: str | Path | None = None,
) -> list[InferenceResult | ItemError]:
    """Infer every item; one result or error record per item, in input order.

    With ``out_path``, each record is appended as soon as it finishes (so a
    crash loses nothing) and the file is rewritten in input order at the end.
    """
    runner = Runner(gateway, templates)
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in ("direct", "two_stage", "cot_chained"):
        raise ValueError(f"unknown mode {mode!r}")
    path = Path(out_path) if out_path is not None else None
    partial = path.with_suffix(path.suffix + ".partial") if path is not None else None
    lock = threading.Lock()
    if partial is not None:
        partial.parent.mkdir(parents=True, exist_ok=True)
        partial.write_text("", encoding="utf-8")

    def one(pair: PairRecord) -> InferenceResult:
        res = runner.infer(pair, mode, backends, grounding)
        if partial is not None:
            with lock, open(partial, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(res.to_dict(), ensure_ascii=False) + "\n")
        return res

    records: list[InferenceResult | ItemError] = []
    for pair, oc in zip(corpus, map_ordered(one, corpus, limit)):
        if oc.ok:
            records.append(oc.value)
        else:
            logger.warning("%s failed: %s", pair.id, oc.error)
            records.append(ItemError(pair.id, mode, f"{type(oc.error).__name__}: {oc.error}"))

    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                payload = rec.to_dict() if isinstance(rec, InferenceResult) else {**rec.to_dict(), "status": "error"}
                fh.write(json.dumps(payload, ensure_ascii=False) + "\n")
        partial.unlink(missing_ok=True)
    return records


def load_inferences(path: str | Path) -> tuple[list[InferenceResult], list[ItemError]]:
    results, errors = [], []
    for row in iter_jsonl(path):
        if row.get("status") == "error":
            errors.append(ItemError(row["pair_id"], row.get("mode", ""), row.get("error", "")))
        else:
            results.append(InferenceResult.from_dict(row))
    return results, errors
