from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..backends import Gateway
from ..models import InferenceResult, MetricReport, PairRecord, iter_jsonl
from .bleu import bleu
from .cider import cider_d
from .clap import clap_similarity
from .config import COLUMNS, MetricConfig
from .items import EmptyEvaluation, EvalItem, MissingReference
from .meteor import meteor
from .rouge import rouge_l


def references_from_rows(rows: Iterable[Mapping]) -> tuple[dict[str, list[str]], dict[str, str]]:
    """Group corpus rows into per-item reference lists and audio locators.

    Rows sharing a video id contribute one reference each (multi-caption test
    splits); a row may also carry extra captions under ``references``. An
    ``audio`` field, if present, is the item's audio file for CLAP.
    """
    refs: dict[str, list[str]] = {}
    audio: dict[str, str] = {}
    for row in rows:
        rec = PairRecord.from_dict(row)
        bucket = refs.setdefault(rec.id, [])
        bucket.append(rec.audio_caption)
        bucket.extend(str(r) for r in row.get("references", []))
        if row.get("audio"):
            audio.setdefault(rec.id, row["audio"])
    return refs, audio


def load_references(path: str | Path) -> tuple[dict[str, list[str]], dict[str, str]]:
    return references_from_rows(iter_jsonl(path))


def score_items(items: Sequence[EvalItem], config: MetricConfig, gateway: Gateway | None = None) -> MetricReport:
    """Run every enabled metric over ``items``."""
    if not items:
        raise EmptyEvaluation("nothing to evaluate")
    per_item: dict[str, dict[str, float]] = {it.item_id: {} for it in items}
    corpus: dict[str, float] = {}
    ids = [it.item_id for it in items]
    enabled = set(config.metrics)

    if "clap" in enabled:
        if gateway is None or not config.clap_text_backend:
            raise ValueError("CLAP needs a gateway and metrics.clap_text_backend")
        res = clap_similarity(items, gateway, config.clap_text_backend, config.clap_audio_backend or None, config.clap_mode)
        corpus["CLAP"] = res.corpus
        for i, s in zip(ids, res.per_item):
            per_item[i]["CLAP"] = s
    if "bleu" in enabled:
        res = bleu(items, config.bleu_max_n)
        corpus.update(res.corpus)
        for i, s in zip(ids, res.per_item):
            per_item[i].update(s)
    if "meteor" in enabled:
        res = meteor(items, config.meteor_alpha, config.meteor_gamma, config.meteor_beta, config.meteor_stages)
        corpus["METEOR"] = res.corpus
        for i, s in zip(ids, res.per_item):
            per_item[i]["METEOR"] = s
    if "rougel" in enabled:
        res = rouge_l(items, config.rouge_beta, config.rouge_multi_ref)
        corpus["ROUGE_L"] = res.corpus
        for i, s in zip(ids, res.per_item):
            per_item[i]["ROUGE_L"] = s
    if "cider" in enabled:
        res = cider_d(items, config.cider_n, config.cider_sigma, config.cider_scale)
        corpus["CIDEr"] = res.corpus
        for i, s in zip(ids, res.per_item):
            per_item[i]["CIDEr"] = s

    order = {name: k for k, name in enumerate(COLUMNS)}

    def ordered(d: dict[str, float]) -> dict[str, float]:
        return {k: float(d[k]) for k in sorted(d, key=lambda k: (order.get(k, len(order)), k))}

    return MetricReport(
        per_item={i: ordered(s) for i, s in per_item.items()},
        corpus=ordered(corpus),
        metric_config_digest=config.digest,
    )


def evaluate(
    results: Sequence[InferenceResult],
    refs: Mapping[str, Sequence[str]],
    config: MetricConfig | None = None,
    gateway: Gateway | None = None,
    audio_refs: Mapping[str, str] | None = None,
) -> MetricReport:
    """Score each result's final caption against that item's references."""
    config = config or MetricConfig()
    if not results:
        raise EmptyEvaluation("no inference results")
    items = []
    for res in results:
        if not refs.get(res.pair_id):
            raise MissingReference(res.pair_id)
        items.append(
            EvalItem(res.pair_id, res.final_caption, tuple(refs[res.pair_id]), (audio_refs or {}).get(res.pair_id))
        )
    return score_items(items, config, gateway)


def report_json(report: MetricReport) -> str:
    return json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n"
