"""CoT caption dataset construction.

For every (video, audio caption) pair: caption the video with a VLM, ask an LLM
to pull the sound-producing objects and the sound events out of the two
captions, and keep the result as a :class:`CoTTriple`. Triples are then
projected into the three subtask datasets (objects, events, audio caption) and
exported as instruction-tuning JSONL.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .backends import BackendRequest, Gateway, map_ordered, video_attachments
from .models import (
    RECOMMENDED_ADAPTER_CONFIG,
    CoTTriple,
    ExportedFile,
    PairRecord,
    SFTExportManifest,
    VideoRef,
    count_lines,
    iter_jsonl,
    write_jsonl,
)
from .prompts import PromptTemplate, default_templates, for_caption_grounding, render

logger = logging.getLogger(__name__)

GROUNDINGS = ("video", "video_caption")
STRATEGY_GROUNDING = {"single_stage": "video", "two_stage": "video_caption"}
SUBTASKS = ("v2o", "o2e", "e2c")

TRIPLES_FILE = "cot_triples.jsonl"
TRIPLE_LOG = "cot_triples.log.jsonl"
FAILURES_FILE = "failures.jsonl"

FORMAT_REMINDER = (
    "Your reply could not be parsed. Answer again with exactly two lines:\n"
    "video_objects: <comma-separated list>\n"
    "sound_events: <comma-separated list>"
)


class ExtractionParseFailure(ValueError):
    def __init__(self, pair_id: str, reply: str):
        super().__init__(f"pair {pair_id}: extraction reply lacks video_objects/sound_events")
        self.pair_id = pair_id
        self.reply = reply


class EmptyVideoCaption(ValueError):
    pass


class GroundingMismatch(ValueError):
    pass


# -- extraction reply parsing --------------------------------------------------

_LABEL = re.compile(
    r"^[\s>*_#-]*\**\s*(video[\s_-]*objects?|sound[\s_-]*events?)\s*\**\s*[:：]\s*\**\s*(.*?)\s*$",
    re.IGNORECASE | re.MULTILINE,
)
_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


def _field_text(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v).strip() for v in value if str(v).strip())
    return str(value).strip() if value is not None else ""


def _parse_json(reply: str) -> tuple[str, str] | None:
    m = _JSON_OBJECT.search(reply)
    if not m:
        return None
    try:
        obj = json.loads(m.group(0))
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    norm = {re.sub(r"[\s-]+", "_", str(k).strip().lower()): v for k, v in obj.items()}
    objects = _field_text(norm.get("video_objects", norm.get("video_object")))
    events = _field_text(norm.get("sound_events", norm.get("sound_event")))
    return (objects, events) if objects and events else None


def parse_extraction(reply: str) -> tuple[str, str] | None:
    """Pull (video_objects, sound_events) out of an LLM reply.

    Accepts the labeled two-line format or a JSON object with the same two
    keys (list values are joined with ", "). Returns None when either field is
    missing or blank.
    """
    found: dict[str, str] = {}
    for m in _LABEL.finditer(reply):
        label = "objects" if m.group(1).lower().startswith("video") else "events"
        value = m.group(2).strip().strip("*").strip()
        if value and label not in found:
            found[label] = value
    if "objects" in found and "events" in found:
        return found["objects"], found["events"]
    return _parse_json(reply)


# -- build ---------------------------------------------------------------------


@dataclass
class BuildResult:
    triples: list[CoTTriple]
    failures: dict[str, str] = field(default_factory=dict)
    resumed: int = 0
    vlm_calls: int = 0
    llm_calls: int = 0

    @property
    def attempted(self) -> int:
        return len(self.triples) - self.resumed + len(self.failures)


class _TripleLog:
    """Append-only log of finished pairs; single writer."""

    def __init__(self, path: Path | None):
        self.path = path
        self._lock = threading.Lock()

    def completed(self) -> dict[str, CoTTriple]:
        done: dict[str, CoTTriple] = {}
        if self.path is None or not self.path.exists():
            return done
        for row in iter_jsonl(self.path):
            if row.get("status") == "ok":
                done[row["pair_id"]] = CoTTriple.from_dict(row)
        return done

    def append(self, row: dict[str, Any]) -> None:
        if self.path is None:
            return
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            fh.flush()


def build_cot_dataset(
    corpus: Sequence[PairRecord],
    vlm: str,
    llm: str,
    gateway: Gateway,
    *,
    templates: Mapping[str, PromptTemplate] | None = None,
    out_dir: str | Path | None = None,
    limit: int = 8,
) -> BuildResult:
    """Run the caption-then-extract loop over ``corpus``.

    With ``out_dir`` set, finished pairs are appended to a log as they
    complete and skipped on the next run; the compacted ``cot_triples.jsonl``
    is written in corpus order at the end. Failed pairs are logged and left
    out, never filled in.
    """
    templates = dict(templates or default_templates())
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log = _TripleLog(out / TRIPLE_LOG if out is not None else None)
    done = log.completed()
    result = BuildResult(triples=[])
    counts_lock = threading.Lock()

    def count(attr: str, n: int = 1) -> None:
        with counts_lock:
            setattr(result, attr, getattr(result, attr) + n)

    def process(pair: PairRecord) -> CoTTriple:
        vc_prompt = render(templates["video_caption"], {})
        vc_req = gateway.request(vlm, vc_prompt.text, gateway.attachments_for(vlm, pair.video))
        vc = gateway.complete(vc_req)
        count("vlm_calls", 0 if vc.cache_hit else 1)
        video_caption = vc.text.rstrip()
        if not video_caption.strip():
            raise EmptyVideoCaption(f"pair {pair.id}: VLM returned an empty video caption")

        ex_prompt = render(templates["cot_extraction"], {"video_caption": video_caption, "audio_caption": pair.audio_caption})
        ex_req = gateway.request(llm, ex_prompt.text)
        ex = gateway.complete(ex_req)
        count("llm_calls", 0 if ex.cache_hit else 1)
        parsed = parse_extraction(ex.text)
        if parsed is None:
            retry = BackendRequest(
                llm,
                (("user", ex_prompt.text), ("assistant", ex.text), ("user", FORMAT_REMINDER)),
                decode_params=ex_req.decode_params,
            )
            ex2 = gateway.complete(retry)
            count("llm_calls", 0 if ex2.cache_hit else 1)
            parsed = parse_extraction(ex2.text)
            if parsed is None:
                raise ExtractionParseFailure(pair.id, ex2.text)
        objects, events = parsed
        triple = CoTTriple(pair.id, video_caption, objects, events, pair.audio_caption)
        log.append({"status": "ok", **triple.to_dict()})
        return triple

    todo = [p for p in corpus if p.id not in done]
    result.resumed = len(corpus) - len(todo)
    if result.resumed:
        logger.info("resuming: %d of %d pairs already built", result.resumed, len(corpus))
    outcomes = dict(zip((p.id for p in todo), map_ordered(process, todo, limit)))

    for pair in corpus:
        if pair.id in done:
            result.triples.append(done[pair.id])
            continue
        oc = outcomes[pair.id]
        if oc.ok:
            result.triples.append(oc.value)
        else:
            msg = f"{type(oc.error).__name__}: {oc.error}"
            logger.warning("pair %s failed: %s", pair.id, msg)
            result.failures[pair.id] = msg
            log.append({"status": "failed", "pair_id": pair.id, "error": msg})

    if out is not None:
        write_jsonl(out / TRIPLES_FILE, result.triples)
        write_jsonl(out / FAILURES_FILE, [{"pair_id": k, "error": v} for k, v in result.failures.items()])
    return result


# -- projection ------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetRow:
    pair_id: str
    dataset: str
    grounding: str
    input: dict[str, Any]
    target: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "pair_id": self.pair_id,
            "dataset": self.dataset,
            "grounding": self.grounding,
            "input": self.input,
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DatasetRow:
        return cls(d["pair_id"], d["dataset"], d["grounding"], d["input"], d["target"])


@dataclass(frozen=True)
class ProjectedDatasets:
    grounding: str
    v2o: list[DatasetRow]
    o2e: list[DatasetRow]
    e2c: list[DatasetRow]

    def by_name(self) -> dict[str, list[DatasetRow]]:
        return {"v2o": self.v2o, "o2e": self.o2e, "e2c": self.e2c}


def project_datasets(
    triples: Sequence[CoTTriple],
    grounding: str = "video",
    videos: Mapping[str, VideoRef] | None = None,
) -> ProjectedDatasets:
    """Split triples into the objects / events / audio-caption subtask datasets.

    ``grounding="video"`` puts the VideoRef (looked up in ``videos``) in every
    row's input; ``"video_caption"`` puts the VLM caption text there instead.
    """
    if grounding not in GROUNDINGS:
        raise ValueError(f"grounding must be one of {GROUNDINGS}")
    if not triples:
        raise ValueError("no triples to project")
    v2o, o2e, e2c = [], [], []
    for t in triples:
        if grounding == "video":
            if videos is None or t.pair_id not in videos:
                raise KeyError(f"no VideoRef for pair {t.pair_id}")
            base: dict[str, Any] = {"video": videos[t.pair_id].to_dict()}
        else:
            base = {"video_caption": t.video_caption}
        v2o.append(DatasetRow(t.pair_id, "v2o", grounding, dict(base), t.video_objects))
        o2e.append(DatasetRow(t.pair_id, "o2e", grounding, {**base, "video_objects": t.video_objects}, t.sound_events))
        e2c.append(DatasetRow(t.pair_id, "e2c", grounding, {**base, "sound_events": t.sound_events}, t.audio_caption))
    return ProjectedDatasets(grounding, v2o, o2e, e2c)


def write_datasets(datasets: ProjectedDatasets, out_dir: str | Path) -> list[ExportedFile]:
    out = Path(out_dir)
    files = []
    for name, rows in datasets.by_name().items():
        path = out / f"d_{name}.jsonl"
        files.append(ExportedFile(str(path), write_jsonl(path, rows)))
    return files


# -- SFT export --------------------------------------------------------------------

_SUBTASK_TEMPLATE = {"v2o": "subtask_v2o", "o2e": "subtask_o2e", "e2c": "subtask_e2c"}


def _sft_row(
    row: DatasetRow, template: PromptTemplate, strategy: str, sample_frames: int, row_id: str
) -> dict[str, Any]:
    bindings = {k: v for k, v in row.input.items() if k != "video"}
    if strategy == "two_stage":
        template = for_caption_grounding(template)
    bindings = {k: v for k, v in bindings.items() if k in template.required_vars}
    prompt = render(template, bindings, strict=True)
    out: dict[str, Any] = {
        "id": row_id,
        "pair_id": row.pair_id,
        "subtask": template.name,
        "messages": [
            {"role": "user", "content": prompt.text},
            {"role": "assistant", "content": row.target},
        ],
    }
    if strategy == "single_stage":
        video = VideoRef.from_dict(row.input["video"])
        out["video"] = video.uri or video.id
        out["images"] = list(video_attachments(video, sample_frames))
    return out


def export_sft(
    datasets: ProjectedDatasets,
    strategy: str,
    out_dir: str | Path,
    *,
    templates: Mapping[str, PromptTemplate] | None = None,
    sample_frames: int = 16,
    include_plain: bool = True,
    extra_files: Sequence[ExportedFile] = (),
    config_digest: str = "",
) -> SFTExportManifest:
    """Write ``sft_<strategy>.jsonl`` (three rows per pair, one per subtask) and
    optionally ``sft_<strategy>_plain.jsonl`` (direct prompt -> audio caption),
    then ``manifest.json`` describing them.
    """
    if strategy not in STRATEGY_GROUNDING:
        raise ValueError(f"strategy must be one of {tuple(STRATEGY_GROUNDING)}")
    if datasets.grounding != STRATEGY_GROUNDING[strategy]:
        raise GroundingMismatch(
            f"{strategy} export needs {STRATEGY_GROUNDING[strategy]!r} grounding, datasets have {datasets.grounding!r}"
        )
    templates = dict(templates or default_templates())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cot_rows = []
    for name in SUBTASKS:
        tmpl = templates[_SUBTASK_TEMPLATE[name]]
        for row in datasets.by_name()[name]:
            cot_rows.append(_sft_row(row, tmpl, strategy, sample_frames, f"{row.pair_id}:{name}"))
    files = list(extra_files)
    cot_path = out / f"sft_{strategy}.jsonl"
    files.append(ExportedFile(str(cot_path), write_jsonl(cot_path, cot_rows)))

    if include_plain:
        tmpl = templates["direct_audio"]
        plain = [_sft_row(row, tmpl, strategy, sample_frames, f"{row.pair_id}:plain") for row in datasets.e2c]
        plain_path = out / f"sft_{strategy}_plain.jsonl"
        files.append(ExportedFile(str(plain_path), write_jsonl(plain_path, plain)))

    manifest = SFTExportManifest(
        strategy=strategy,
        datasets=tuple(files),
        recommended_adapter_config=dict(RECOMMENDED_ADAPTER_CONFIG),
        config_digest=config_digest,
    )
    for f in manifest.datasets:
        actual = count_lines(f.path)
        if actual != f.records:
            raise RuntimeError(f"{f.path}: manifest says {f.records} rows, file has {actual}")
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    return manifest


def load_manifest(path: str | Path) -> SFTExportManifest:
    return SFTExportManifest.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def read_dataset_rows(path: str | Path) -> list[DatasetRow]:
    return [DatasetRow.from_dict(r) for r in iter_jsonl(path)]


__all__ = [
    "BuildResult",
    "DatasetRow",
    "EmptyVideoCaption",
    "ExtractionParseFailure",
    "GroundingMismatch",
    "ProjectedDatasets",
    "build_cot_dataset",
    "export_sft",
    "parse_extraction",
    "project_datasets",
    "write_datasets",
]
