from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .items import EvalItem, check_items
from .tokenize import tokenize


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, O(len(a) * len(b)) time, O(len(b)) space."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def f_beta(p: float, r: float, beta: float) -> float:
    if p == 0 or r == 0:
        return 0.0
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def rouge_l_sentence(cand: list[str], refs: list[list[str]], beta: float = 1.2, multi_ref: str = "coco") -> float:
    if not cand:
        return 0.0
    pr = []
    for ref in refs:
        lcs = lcs_length(cand, ref)
        pr.append((lcs / len(cand), lcs / len(ref) if ref else 0.0))
    if multi_ref == "coco":
        return f_beta(max(p for p, _ in pr), max(r for _, r in pr), beta)
    return max(f_beta(p, r, beta) for p, r in pr)


@dataclass(frozen=True)
class RougeResult:
    corpus: float
    per_item: list[float]


def rouge_l(items: Sequence[EvalItem], beta: float = 1.2, multi_ref: str = "coco") -> RougeResult:
    """ROUGE-L F-measure per item; corpus score is the arithmetic mean."""
    items = check_items(items)
    scores = [
        rouge_l_sentence(tokenize(it.candidate), [tokenize(r) for r in it.references], beta, multi_ref) for it in items
    ]
    return RougeResult(sum(scores) / len(scores), scores)
