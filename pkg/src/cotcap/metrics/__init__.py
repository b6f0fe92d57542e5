"""Caption metrics: BLEU, METEOR, ROUGE-L, CIDEr-D and CLAP cosine."""

from .bleu import bleu
from .cider import SingleItemCorpusWarning, cider_d
from .clap import clap_similarity, cosine
from .config import COLUMNS, METRIC_FAMILIES_CLI, MetricConfig
from .evaluate import evaluate, load_references, references_from_rows, report_json, score_items
from .items import EmptyEvaluation, EvalItem, MissingAudioRef, MissingReference
from .meteor import meteor
from .rouge import lcs_length, rouge_l
from .tokenize import tokenize

__all__ = [
    "COLUMNS",
    "METRIC_FAMILIES_CLI",
    "EmptyEvaluation",
    "EvalItem",
    "MetricConfig",
    "MissingAudioRef",
    "MissingReference",
    "SingleItemCorpusWarning",
    "bleu",
    "cider_d",
    "clap_similarity",
    "cosine",
    "evaluate",
    "lcs_length",
    "load_references",
    "meteor",
    "references_from_rows",
    "report_json",
    "rouge_l",
    "score_items",
    "tokenize",
]
