from __future__ import annotations

import unicodedata
from functools import lru_cache


@lru_cache(maxsize=65536)
def _tokenize(text: str) -> tuple[str, ...]:
    # every Unicode punctuation char (categories P*) becomes a separator
    chars = [" " if unicodedata.category(ch).startswith("P") else ch for ch in text.lower()]
    return tuple("".join(chars).split())


def tokenize(text: str) -> list[str]:
    """Lowercase, drop punctuation, split on whitespace.

    >>> tokenize("A dog barks!")
    ['a', 'dog', 'barks']
    """
    return list(_tokenize(text))


def ngrams(tokens: list[str] | tuple[str, ...], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]
