"""Comparison systems: a seeded random answerer and an inverted-index
sentence retriever over the verbalized contexts.

The random baseline samples from a per-table candidate pool (cell values,
aggregate values, subject names). The retrieval baseline indexes one
document per verbalized sentence under the pinned TF-IDF scheme and
answers with whole sentence texts in rank order.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .table_model import Table, normalize_cell
from .textutil import smoothed_idf, terms
from .verbalizer import AggregationFact, TextualContext, Triple, aggregate

INDEX_FORMAT = "tsqa-sentence-index"
INDEX_VERSION = 1


@dataclass(frozen=True)
class CandidatePool:
    table_id: str
    choices: tuple[str, ...]  # deduplicated, normalized, first-occurrence order


def build_pool(table: Table) -> CandidatePool:
    """All answerable strings for a table: cell values, aggregate values,
    and subject names, normalized and deduplicated."""
    seen: dict[str, None] = {}
    for row in table.rows:
        for cell in row:
            if not cell.is_empty:
                seen.setdefault(cell.normalized, None)
    for fact in aggregate(table):
        seen.setdefault(normalize_cell(fact.value), None)
        if fact.winner is not None:
            seen.setdefault(normalize_cell(fact.winner), None)
    for row in table.rows:
        subject = row[table.subject_column]
        if not subject.is_empty:
            seen.setdefault(subject.normalized, None)
    return CandidatePool(table_id=table.id, choices=tuple(seen))


def random_answer(pool: CandidatePool, k: int, seed: int) -> list[str]:
    """k distinct choices sampled without replacement; pure in (pool, k, seed)."""
    if not pool.choices:
        return []
    rng = random.Random(seed)
    return rng.sample(list(pool.choices), min(k, len(pool.choices)))


def _provenance_tag(origin: Triple | AggregationFact) -> str:
    if isinstance(origin, Triple):
        return f"triple:{origin.provenance[0]}:{origin.provenance[1]}"
    return f"aggregation:{origin.kind}:{origin.column}"


@dataclass(frozen=True)
class IndexedSentence:
    id: int
    text: str
    table_id: str
    provenance: tuple[str, ...]


class SentenceIndex:
    """Inverted index over verbalized sentences, one document per sentence.

    Postings map each lowercased term to (sentence id, tf-idf weight); idf
    is computed over the whole sentence collection. Queries are ranked by
    cosine similarity, ties broken by sentence id.
    """

    def __init__(self, sentences: list[IndexedSentence]):
        self.sentences = list(sentences)
        docs = [terms(s.text) for s in self.sentences]
        self.n_docs = len(docs)
        self.df: Counter = Counter()
        for doc in docs:
            self.df.update(set(doc))
        self.postings: dict[str, list[tuple[int, float]]] = {}
        self._norms: dict[int, float] = {}
        for sent, doc in zip(self.sentences, docs):
            counts = Counter(doc)
            weights = {
                t: (1.0 + math.log(tf)) * smoothed_idf(self.df[t], self.n_docs)
                for t, tf in counts.items()
            }
            self._norms[sent.id] = math.sqrt(sum(w * w for w in weights.values()))
            for t, w in weights.items():
                self.postings.setdefault(t, []).append((sent.id, w))

    def __len__(self) -> int:
        return self.n_docs

    def save(self, path: str | Path):
        payload = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "sentences": [
                {"id": s.id, "text": s.text, "table_id": s.table_id, "provenance": list(s.provenance)}
                for s in self.sentences
            ],
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SentenceIndex":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != INDEX_FORMAT or payload.get("version") != INDEX_VERSION:
            raise ValueError(f"not a {INDEX_FORMAT} v{INDEX_VERSION} file: {path}")
        sentences = [
            IndexedSentence(
                id=s["id"], text=s["text"], table_id=s["table_id"], provenance=tuple(s["provenance"])
            )
            for s in payload["sentences"]
        ]
        return cls(sentences)


def index_sentences(contexts: list[TextualContext]) -> SentenceIndex:
    """Index every sentence of every context as its own document."""
    sentences: list[IndexedSentence] = []
    for ctx in contexts:
        for sent in ctx.sentences():
            sentences.append(
                IndexedSentence(
                    id=len(sentences),
                    text=ctx.sentence_text(sent),
                    table_id=ctx.table_id,
                    provenance=tuple(_provenance_tag(seg.origin) for seg in sent.segments),
                )
            )
    return SentenceIndex(sentences)


def retrieve_answers(question: str, index: SentenceIndex, k: int) -> list[str]:
    """Top-k sentence texts by TF-IDF cosine; zero-similarity queries return []."""
    q_terms = terms(question)
    if not q_terms or index.n_docs == 0:
        return []
    q_counts = Counter(q_terms)
    q_weights = {
        t: (1.0 + math.log(tf)) * smoothed_idf(index.df[t], index.n_docs)
        for t, tf in q_counts.items()
    }
    q_norm = math.sqrt(sum(w * w for w in q_weights.values()))

    dots: dict[int, float] = {}
    for t, qw in q_weights.items():
        for sent_id, dw in index.postings.get(t, ()):
            dots[sent_id] = dots.get(sent_id, 0.0) + qw * dw
    scored = [
        (dot / (q_norm * index._norms[sent_id]), sent_id)
        for sent_id, dot in dots.items()
        if dot > 0.0
    ]
    scored.sort(key=lambda x: (-x[0], x[1]))
    by_id = {s.id: s for s in index.sentences}
    return [by_id[sent_id].text for _, sent_id in scored[:k]]
