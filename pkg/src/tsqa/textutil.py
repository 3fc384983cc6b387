"""Tokenization and the pinned TF-IDF scheme shared by readers and baselines.

Tokens are maximal runs of letters/digits with character offsets;
punctuation separates. Weighting is log-scaled term frequency times
add-one-smoothed inverse document frequency, compared by cosine.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


def tokenize(text: str) -> list[Token]:
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def terms(text: str) -> list[str]:
    return [t.text.lower() for t in tokenize(text)]


def smoothed_idf(df: int, n_docs: int) -> float:
    return 1.0 + math.log((1 + n_docs) / (1 + df))


def tfidf_vector(term_list: list[str], df: Counter, n_docs: int) -> dict[str, float]:
    counts = Counter(term_list)
    return {
        t: (1.0 + math.log(tf)) * smoothed_idf(df[t], n_docs)
        for t, tf in counts.items()
    }


def cosine(u: dict[str, float], v: dict[str, float]) -> float:
    if not u or not v:
        return 0.0
    if len(v) < len(u):
        u, v = v, u
    dot = sum(w * v[t] for t, w in u.items() if t in v)
    if dot == 0.0:
        return 0.0
    nu = math.sqrt(sum(w * w for w in u.values()))
    nv = math.sqrt(sum(w * w for w in v.values()))
    return dot / (nu * nv)


def document_frequencies(docs: list[list[str]]) -> Counter:
    df: Counter = Counter()
    for doc in docs:
        df.update(set(doc))
    return df
