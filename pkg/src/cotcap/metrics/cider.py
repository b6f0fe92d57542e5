"""CIDEr-D: TF-IDF n-gram cosine with clipping and a Gaussian length penalty.

Document frequencies come from the reference sets of the corpus being scored,
so a one-item corpus has all IDF weights equal to zero and scores 0.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .items import EvalItem, check_items
from .tokenize import tokenize


class SingleItemCorpusWarning(UserWarning):
    pass


def _counts(tokens: list[str], n: int) -> list[Counter]:
    return [Counter(tuple(tokens[i : i + k]) for i in range(len(tokens) - k + 1)) for k in range(1, n + 1)]


@dataclass(frozen=True)
class CiderResult:
    corpus: float
    per_item: list[float]


class _Idf:
    def __init__(self, ref_counts: list[list[list[Counter]]]):
        self.df: Counter = Counter()
        for refs in ref_counts:
            grams = set()
            for ref in refs:
                for order in ref:
                    grams.update(order)
            self.df.update(grams)
        self.log_n = math.log(len(ref_counts))

    def weight(self, gram: tuple[str, ...]) -> float:
        # unseen grams count as df=1 so the weight stays finite
        return self.log_n - math.log(max(1, self.df[gram]))


def _vectorize(counts: list[Counter], idf: _Idf) -> tuple[list[dict], list[float]]:
    vecs, norms = [], []
    for order in counts:
        v = {g: tf * idf.weight(g) for g, tf in order.items()}
        vecs.append(v)
        norms.append(math.sqrt(sum(x * x for x in v.values())))
    return vecs, norms


def cider_d(items: Sequence[EvalItem], n: int = 4, sigma: float = 6.0, scale: float = 10.0) -> CiderResult:
    items = check_items(items)
    if len(items) == 1:
        warnings.warn("CIDEr on a one-item corpus: every IDF weight is 0", SingleItemCorpusWarning, stacklevel=2)
    cand_tokens = [tokenize(it.candidate) for it in items]
    ref_tokens = [[tokenize(r) for r in it.references] for it in items]
    ref_counts = [[_counts(r, n) for r in refs] for refs in ref_tokens]
    idf = _Idf(ref_counts)

    scores = []
    for cand, refs, rcounts in zip(cand_tokens, ref_tokens, ref_counts):
        cvec, cnorm = _vectorize(_counts(cand, n), idf)
        total = 0.0
        for ref, rc in zip(refs, rcounts):
            rvec, rnorm = _vectorize(rc, idf)
            penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma**2))
            for k in range(n):
                if cnorm[k] == 0 or rnorm[k] == 0:
                    continue
                dot = sum(min(w, rvec[k].get(g, 0.0)) * rvec[k].get(g, 0.0) for g, w in cvec[k].items())
                total += penalty * dot / (cnorm[k] * rnorm[k])
        scores.append(scale * total / (n * len(refs)))
    return CiderResult(sum(scores) / len(scores), scores)
