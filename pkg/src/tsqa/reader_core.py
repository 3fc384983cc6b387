"""QA core: window chunking, pluggable readers, candidate merging.

A textual context is cut into overlapping token windows (consecutive
windows share exactly `doc_stride` tokens), each window is handed to a
reader, and the per-window candidates are merged into one ranked list.
Two readers ship: a deterministic TF-IDF lexical reader that answers from
segment alignment, and a client for external reader processes speaking
newline-delimited JSON over stdin/stdout.
"""

from __future__ import annotations

import itertools
import json
import logging
import subprocess
import threading
from dataclasses import dataclass, replace
from typing import Protocol

from .table_model import normalize_cell
from .textutil import cosine, document_frequencies, terms, tfidf_vector, tokenize
from .verbalizer import AggregationFact, Segment, TextualContext, Triple

logger = logging.getLogger(__name__)

_WH_SUBJECT_WORDS = frozenset({"which", "who"})


class ReaderUnavailableError(RuntimeError):
    """A reader implementation failed; carries the window it failed on."""

    def __init__(self, message: str, window_index: int):
        super().__init__(f"{message} (window {window_index})")
        self.window_index = window_index


@dataclass(frozen=True)
class ReaderParams:
    max_seq_len: int = 512
    doc_stride: int = 128
    top_k: int = 10
    max_answer_len: int = 15
    max_question_len: int = 64

    def __post_init__(self):
        if not 0 < self.doc_stride < self.max_seq_len:
            raise ValueError(f"doc_stride must be in (0, max_seq_len): {self}")
        if self.top_k < 1 or self.max_answer_len < 1 or self.max_question_len < 1:
            raise ValueError(f"top_k, max_answer_len, max_question_len must be >= 1: {self}")


@dataclass(frozen=True)
class Window:
    index: int
    token_start: int
    token_end: int  # exclusive
    char_start: int
    char_end: int
    text: str
    segments: tuple[Segment, ...]  # context segments fully inside, context coordinates

    @property
    def token_count(self) -> int:
        return self.token_end - self.token_start


@dataclass(frozen=True)
class AnswerCandidate:
    text: str
    score: float
    span: tuple[int, int]
    origin: int  # window index
    provenance: Triple | AggregationFact | None = None


class Reader(Protocol):
    supports_concurrency: bool

    def read_window(
        self, question: str, window: Window, params: ReaderParams
    ) -> list[AnswerCandidate]: ...


def chunk_context(context: TextualContext, params: ReaderParams) -> list[Window]:
    """Cut the context into token windows of at most max_seq_len tokens.

    Window starts advance by max_seq_len - doc_stride tokens, so consecutive
    windows overlap by exactly doc_stride; the final window may be shorter.
    Any span of at most doc_stride tokens is fully contained in some window.
    """
    tokens = tokenize(context.text)
    if not tokens:
        return []
    step = params.max_seq_len - params.doc_stride
    windows: list[Window] = []
    start = 0
    while True:
        end = min(start + params.max_seq_len, len(tokens))
        char_start = 0 if start == 0 else tokens[start].start
        char_end = len(context.text) if end == len(tokens) else tokens[end - 1].end
        segs = tuple(s for s in context.segments if s.start >= char_start and s.end <= char_end)
        windows.append(
            Window(
                index=len(windows),
                token_start=start,
                token_end=end,
                char_start=char_start,
                char_end=char_end,
                text=context.text[char_start:char_end],
                segments=segs,
            )
        )
        if end == len(tokens):
            return windows
        start += step


def _segment_terms(window: Window, seg: Segment) -> list[str]:
    """Scoring document for one segment: its clause text, prefixed with the
    row subject for triple clauses so continuation clauses ("its scope is...")
    stay attached to their row."""
    clause = window.text[seg.start - window.char_start : seg.end - window.char_start]
    doc = terms(clause)
    if isinstance(seg.origin, Triple):
        doc = terms(seg.origin.subject) + doc
    return doc


def _candidate_for(
    question_first_word: str, window: Window, seg: Segment, score: float
) -> AnswerCandidate | None:
    origin = seg.origin
    if isinstance(origin, AggregationFact) and (
        origin.kind in ("max", "min") and question_first_word in _WH_SUBJECT_WORDS
    ):
        answer = origin.winner or ""
    elif isinstance(origin, Triple):
        answer = origin.object
    else:
        answer = origin.value

    local_clause_start = seg.start - window.char_start
    local_clause_end = seg.end - window.char_start
    # Values are quoted by the verbalizer; prefer the quoted occurrence.
    pos = window.text.find(f'"{answer}"', local_clause_start, local_clause_end)
    if pos >= 0:
        pos += 1
    else:
        pos = window.text.find(answer, local_clause_start, local_clause_end)
    if pos < 0 or not answer:
        return None
    return AnswerCandidate(
        text=answer, score=score, span=(pos, pos + len(answer)), origin=window.index,
        provenance=origin,
    )


def lexical_read(question: str, window: Window) -> list[AnswerCandidate]:
    """Deterministic reader: rank the window's aligned clauses by TF-IDF
    cosine against the question and answer with each clause's object value
    (aggregate value, or the winning subject for which/who questions about
    max/min facts). Scores are cosines in [0, 1]; zero-similarity clauses
    are dropped."""
    if not window.segments:
        return []
    q_terms = terms(question)
    if not q_terms:
        return []
    docs = [_segment_terms(window, seg) for seg in window.segments]
    df = document_frequencies(docs)
    n = len(docs)
    q_vec = tfidf_vector(q_terms, df, n)
    first_word = q_terms[0]

    candidates: list[AnswerCandidate] = []
    for seg, doc in zip(window.segments, docs):
        score = cosine(q_vec, tfidf_vector(doc, df, n))
        if score <= 0.0:
            continue
        cand = _candidate_for(first_word, window, seg, score)
        if cand is not None:
            candidates.append(cand)
    candidates.sort(key=lambda c: (-c.score, c.span, c.text))
    return candidates


class LexicalReader:
    """Hermetic stand-in for a neural reader; pure and thread-safe."""

    supports_concurrency = True

    def read_window(
        self, question: str, window: Window, params: ReaderParams
    ) -> list[AnswerCandidate]:
        return lexical_read(question, window)


def merge_candidates(
    per_window: list[list[AnswerCandidate]], top_k: int
) -> list[AnswerCandidate]:
    """Merge ranked per-window lists: deduplicate by normalized answer text
    keeping the best score (ties: earlier span, then lexicographic text),
    re-rank globally, truncate to top_k."""
    best: dict[str, AnswerCandidate] = {}
    for cand in itertools.chain.from_iterable(per_window):
        key = normalize_cell(cand.text)
        kept = best.get(key)
        if kept is None or (-cand.score, cand.span[0], cand.text) < (
            -kept.score, kept.span[0], kept.text,
        ):
            best[key] = cand
    merged = sorted(best.values(), key=lambda c: (-c.score, c.span[0], c.text))
    return merged[:top_k]


def truncate_question(question: str, max_question_len: int) -> str:
    tokens = tokenize(question)
    if len(tokens) <= max_question_len:
        return question
    return question[: tokens[max_question_len - 1].end]


def read(
    question: str,
    context: TextualContext,
    params: ReaderParams,
    reader: Reader,
) -> list[AnswerCandidate]:
    """Answer a question over the full context via the given reader.

    Chunks the context, collects per-window candidates, remaps spans from
    window-local to context-global characters, resolves provenance through
    segment alignment, and merges into one ranked top_k list.
    """
    if not question.strip():
        raise ValueError("question must be non-empty")
    question = truncate_question(question, params.max_question_len)

    per_window: list[list[AnswerCandidate]] = []
    for window in chunk_context(context, params):
        raw = reader.read_window(question, window, params)
        kept: list[AnswerCandidate] = []
        for cand in raw:
            start, end = cand.span
            if not (0 <= start <= end <= len(window.text)) or window.text[start:end] != cand.text:
                logger.warning("dropping non-extractive candidate %r from window %d",
                               cand.text, window.index)
                continue
            g_span = (start + window.char_start, end + window.char_start)
            provenance = cand.provenance or (
                context.segment_at(g_span[0]).origin if context.segment_at(g_span[0]) else None
            )
            kept.append(replace(cand, span=g_span, origin=window.index, provenance=provenance))
        per_window.append(kept)
    return merge_candidates(per_window, params.top_k)


class ExternalProcessReader:
    """Client for reader processes speaking the wire protocol: one JSON
    request per line on stdin, one JSON response per line on stdout.

    Requests carry id, question, context, top_k, max_answer_len; responses
    echo the id and list answers with text, score, and char offsets into the
    sent context. One request is in flight per session; a dead process is
    restarted once per request before giving up.
    """

    supports_concurrency = False

    def __init__(self, argv: list[str]):
        if not argv:
            raise ValueError("adapter command must be non-empty")
        self.argv = list(argv)
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._counter = itertools.count(1)

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
            )
        return self._proc

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _roundtrip(self, request: dict) -> dict:
        proc = self._ensure_proc()
        proc.stdin.write(json.dumps(request, ensure_ascii=False) + "\n")
        proc.stdin.flush()
        line = proc.stdout.readline()
        if not line:
            raise BrokenPipeError("adapter closed its stdout")
        response = json.loads(line)
        if response.get("id") != request["id"]:
            raise ValueError(f"adapter echoed id {response.get('id')!r}, expected {request['id']!r}")
        return response

    def read_window(
        self, question: str, window: Window, params: ReaderParams
    ) -> list[AnswerCandidate]:
        request = {
            "id": str(next(self._counter)),
            "question": question,
            "context": window.text,
            "top_k": params.top_k,
            "max_answer_len": params.max_answer_len,
        }
        with self._lock:
            for attempt in (0, 1):
                try:
                    response = self._roundtrip(request)
                    break
                except (OSError, ValueError) as exc:
                    self.close()
                    if attempt == 1:
                        raise ReaderUnavailableError(str(exc), window.index) from exc
                    logger.warning("adapter failed (%s); restarting once", exc)
        if response.get("error"):
            raise ReaderUnavailableError(f"adapter error: {response['error']}", window.index)
        out = []
        for ans in response.get("answers", []):
            out.append(
                AnswerCandidate(
                    text=ans["text"],
                    score=float(ans["score"]),
                    span=(int(ans["start"]), int(ans["end"])),
                    origin=window.index,
                )
            )
        return out


class PerWorkerExternalReader:
    """External reader that gives each worker thread its own child process,
    so concurrent questions never share a wire session."""

    supports_concurrency = True

    def __init__(self, argv: list[str]):
        self.argv = list(argv)
        self._local = threading.local()
        self._instances: list[ExternalProcessReader] = []
        self._instances_lock = threading.Lock()

    def _instance(self) -> ExternalProcessReader:
        reader = getattr(self._local, "reader", None)
        if reader is None:
            reader = ExternalProcessReader(self.argv)
            self._local.reader = reader
            with self._instances_lock:
                self._instances.append(reader)
        return reader

    def read_window(
        self, question: str, window: Window, params: ReaderParams
    ) -> list[AnswerCandidate]:
        return self._instance().read_window(question, window, params)

    def close(self):
        with self._instances_lock:
            for reader in self._instances:
                reader.close()
            self._instances.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
