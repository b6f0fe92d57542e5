from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any

# Column order of the printed results table.
COLUMNS = ("CLAP", "BLEU_1", "BLEU_2", "BLEU_3", "BLEU_4", "METEOR", "ROUGE_L", "CIDEr")

METRIC_FAMILIES = ("clap", "bleu", "meteor", "rougel", "cider")
DEFAULT_METRICS = ("bleu", "meteor", "rougel", "cider")
# CLI spellings -> metric family
METRIC_FAMILIES_CLI = {
    "clap": "clap", "bleu": "bleu", "meteor": "meteor",
    "rougel": "rougel", "rouge": "rougel", "cider": "cider", "ciderd": "cider",
}


@dataclass(frozen=True)
class MetricConfig:
    """Every knob that changes a score. Its digest is stamped into reports."""

    metrics: tuple[str, ...] = DEFAULT_METRICS
    bleu_max_n: int = 4
    rouge_beta: float = 1.2
    # "coco": F from the best precision and best recall over references;
    # "max_f": best per-reference F.
    rouge_multi_ref: str = "coco"
    cider_n: int = 4
    cider_sigma: float = 6.0
    cider_scale: float = 10.0
    meteor_alpha: float = 0.9
    meteor_beta: float = 3.0
    meteor_gamma: float = 0.5
    meteor_stages: tuple[str, ...] = ("exact", "stem")
    clap_mode: str = "audio"
    clap_text_backend: str = ""
    clap_audio_backend: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        unknown = set(self.metrics) - set(METRIC_FAMILIES)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}; choose from {METRIC_FAMILIES}")
        if self.rouge_multi_ref not in ("coco", "max_f"):
            raise ValueError("rouge_multi_ref must be 'coco' or 'max_f'")
        if self.clap_mode not in ("audio", "text"):
            raise ValueError("clap_mode must be 'audio' or 'text'")
        bad = set(self.meteor_stages) - {"exact", "stem"}
        if bad or not self.meteor_stages or self.meteor_stages[0] != "exact":
            raise ValueError("meteor_stages must start with 'exact' and may add 'stem'")

    @classmethod
    def from_table(cls, table: dict[str, Any]) -> MetricConfig:
        known = set(cls.__dataclass_fields__) - {"extra"}
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in table.items() if k in known}
        extra = {k: v for k, v in table.items() if k not in known}
        return cls(extra=extra, **kwargs)

    def with_metrics(self, metrics: tuple[str, ...]) -> MetricConfig:
        d = asdict(self)
        d["metrics"] = tuple(metrics)
        return MetricConfig(**d)

    @property
    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()
