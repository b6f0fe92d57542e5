"""METEOR with exact and Porter-stem matching (no synonym stage).

The alignment maximizes exact matches first, then total matches (stem matches
fill in among the leftovers), then minimizes the number of chunks, where a
chunk is a run of matches contiguous in both candidate and reference. The
search is exact: a memoized walk over candidate positions keyed by the set of
reference positions still in play. Pathological inputs (very long, or long runs
of one repeated word on both sides) exceed a state budget and are aligned by a
bounded beam search instead, with a warning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from nltk.stem.porter import PorterStemmer

from .items import EvalItem, check_items
from .tokenize import tokenize

logger = logging.getLogger(__name__)

_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)

# Memo entries the exact search may create before giving up. Ordinary captions
# need a few hundred; only long runs of one repeated word on both sides get
# near this, and those fall back to a beam search.
EXACT_STATE_BUDGET = 20_000
MAX_EXACT_TOKENS = 200
BEAM_WIDTH = 16


class _BudgetExceeded(Exception):
    pass


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    return _stemmer.stem(word)


@dataclass(frozen=True)
class Alignment:
    pairs: tuple[tuple[int, int], ...]
    exact: int
    chunks: int

    @property
    def matches(self) -> int:
        return len(self.pairs)


def count_chunks(pairs: Sequence[tuple[int, int]]) -> int:
    """Chunks in an alignment given as (candidate idx, reference idx) pairs."""
    chunks = 0
    prev = None
    for i, j in sorted(pairs):
        if prev is None or not (i == prev[0] + 1 and j == prev[1] + 1):
            chunks += 1
        prev = (i, j)
    return chunks


def align(cand: Sequence[str], ref: Sequence[str], stages: Sequence[str] = ("exact", "stem")) -> Alignment:
    edges = _edges(cand, ref, stages)
    if len(cand) <= MAX_EXACT_TOKENS:
        try:
            return _align_exact(edges)
        except _BudgetExceeded:
            pass
    logger.warning("METEOR alignment of %d x %d tokens is too large for exact search; using beam search", len(cand), len(ref))
    return _align_beam(edges)


def _edges(cand: Sequence[str], ref: Sequence[str], stages: Sequence[str]) -> list[list[tuple[int, bool]]]:
    use_stem = "stem" in stages
    # edges[i] = [(j, is_exact)]
    edges: list[list[tuple[int, bool]]] = []
    cstems = [stem(w) for w in cand] if use_stem else []
    rstems = [stem(w) for w in ref] if use_stem else []
    for i, w in enumerate(cand):
        row = []
        for j, r in enumerate(ref):
            if w == r:
                row.append((j, True))
            elif use_stem and cstems[i] == rstems[j]:
                row.append((j, False))
        edges.append(row)
    return edges


def _align_exact(edges: list[list[tuple[int, bool]]]) -> Alignment:
    n = len(edges)
    # reach[i]: reference positions some candidate token at or after i can use.
    # Only those bits of `used` can change the rest of the search, so the memo
    # key keeps just them; likewise prev_j matters only if it can extend a chunk.
    reach = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        reach[i] = reach[i + 1]
        for j, _ in edges[i]:
            reach[i] |= 1 << j
    memo: dict[tuple[int, int, int], tuple[tuple[int, int, int], tuple]] = {}

    # value: (exact, total, -chunks), lexicographically maximized
    def best(i: int, used: int, prev_j: int) -> tuple[tuple[int, int, int], tuple]:
        if i == n:
            return (0, 0, 0), ()
        used &= reach[i]
        if prev_j >= 0 and not (reach[i] >> (prev_j + 1) & 1):
            prev_j = -1
        key = (i, used, prev_j)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if len(memo) >= EXACT_STATE_BUDGET:
            raise _BudgetExceeded
        score, path = best(i + 1, used, -1)
        result = (score, path)
        for j, exact in edges[i]:
            if used >> j & 1:
                continue
            sub, subpath = best(i + 1, used | (1 << j), j)
            new_chunk = 0 if (prev_j >= 0 and j == prev_j + 1) else 1
            cand_score = (sub[0] + int(exact), sub[1] + 1, sub[2] - new_chunk)
            if cand_score > result[0]:
                result = (cand_score, ((i, j),) + subpath)
        memo[key] = result
        return result

    (exact, _, neg_chunks), pairs = best(0, 0, -1)
    return Alignment(pairs, exact, -neg_chunks)


def _align_beam(edges: list[list[tuple[int, bool]]], width: int = BEAM_WIDTH) -> Alignment:
    """Left-to-right beam over the same objective; not guaranteed optimal."""
    # state: (score, used, prev_j, pairs)
    beam: list[tuple[tuple[int, int, int], int, int, tuple]] = [((0, 0, 0), 0, -1, ())]
    for i, row in enumerate(edges):
        nxt = {}
        for score, used, prev_j, pairs in beam:
            options = [(score, used, -1, pairs)]
            for j, exact in row:
                if used >> j & 1:
                    continue
                new_chunk = 0 if (prev_j >= 0 and j == prev_j + 1) else 1
                s2 = (score[0] + int(exact), score[1] + 1, score[2] - new_chunk)
                options.append((s2, used | (1 << j), j, pairs + ((i, j),)))
            for opt in options:
                key = (opt[1], opt[2])
                if key not in nxt or opt[0] > nxt[key][0]:
                    nxt[key] = opt
        beam = sorted(nxt.values(), key=lambda st: (st[0], -st[2]), reverse=True)[:width]
    score, _, _, pairs = beam[0]
    return Alignment(pairs, score[0], -score[2])


def meteor_sentence(
    cand: Sequence[str],
    ref: Sequence[str],
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
    stages: Sequence[str] = ("exact", "stem"),
) -> float:
    if not cand or not ref:
        return 0.0
    a = align(cand, ref, stages)
    m = a.matches
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (a.chunks / m) ** beta
    return fmean * (1 - penalty)


@dataclass(frozen=True)
class MeteorResult:
    corpus: float
    per_item: list[float]


def meteor(
    items: Sequence[EvalItem],
    alpha: float = 0.9,
    gamma: float = 0.5,
    beta: float = 3.0,
    stages: Sequence[str] = ("exact", "stem"),
) -> MeteorResult:
    """Per item, the best score over references; corpus score is the mean."""
    items = check_items(items)
    scores = []
    for it in items:
        cand = tokenize(it.candidate)
        scores.append(max(meteor_sentence(cand, tokenize(r), alpha, beta, gamma, stages) for r in it.references))
    return MeteorResult(sum(scores) / len(scores), scores)
