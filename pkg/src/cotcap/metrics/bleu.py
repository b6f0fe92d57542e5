"""Corpus BLEU without smoothing.

Clipped n-gram matches and candidate n-gram totals are summed over the whole
corpus before the precisions are taken. The brevity penalty uses, per item,
the reference length closest to the candidate length (ties go to the shorter
reference). A zero precision at any order makes that BLEU_n exactly zero.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .items import EvalItem, check_items
from .tokenize import ngrams, tokenize


@dataclass(frozen=True)
class BleuStats:
    cand_len: int
    ref_len: int
    matches: tuple[int, ...]
    totals: tuple[int, ...]

    def __add__(self, other: BleuStats) -> BleuStats:
        return BleuStats(
            self.cand_len + other.cand_len,
            self.ref_len + other.ref_len,
            tuple(a + b for a, b in zip(self.matches, other.matches)),
            tuple(a + b for a, b in zip(self.totals, other.totals)),
        )


def closest_ref_len(cand_len: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def sentence_stats(cand: list[str], refs: list[list[str]], max_n: int = 4) -> BleuStats:
    matches, totals = [], []
    for n in range(1, max_n + 1):
        cand_counts = Counter(ngrams(cand, n))
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, c in Counter(ngrams(ref, n)).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        matches.append(sum(min(c, max_ref[g]) for g, c in cand_counts.items()))
        totals.append(max(0, len(cand) - n + 1))
    return BleuStats(len(cand), closest_ref_len(len(cand), [len(r) for r in refs]), tuple(matches), tuple(totals))


def bleu_from_stats(stats: BleuStats) -> list[float]:
    """BLEU_1..BLEU_max_n from accumulated counts."""
    max_n = len(stats.matches)
    if stats.cand_len == 0:
        return [0.0] * max_n
    bp = 1.0 if stats.cand_len >= stats.ref_len else math.exp(1.0 - stats.ref_len / stats.cand_len)
    scores = []
    log_sum = 0.0
    zero = False
    for k in range(max_n):
        if stats.matches[k] == 0 or stats.totals[k] == 0:
            zero = True
        if zero:
            scores.append(0.0)
            continue
        log_sum += math.log(stats.matches[k] / stats.totals[k])
        scores.append(bp * math.exp(log_sum / (k + 1)))
    return scores


@dataclass(frozen=True)
class BleuResult:
    corpus: dict[str, float]
    per_item: list[dict[str, float]]


def _named(scores: list[float]) -> dict[str, float]:
    return {f"BLEU_{k + 1}": s for k, s in enumerate(scores)}


def bleu(items: Sequence[EvalItem], max_n: int = 4) -> BleuResult:
    items = check_items(items)
    per_item = []
    total = None
    for it in items:
        st = sentence_stats(tokenize(it.candidate), [tokenize(r) for r in it.references], max_n)
        total = st if total is None else total + st
        per_item.append(_named(bleu_from_stats(st)))
    return BleuResult(_named(bleu_from_stats(total)), per_item)
