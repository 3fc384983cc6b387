"""Benchmark loading, system execution, metrics, and report emission.

Loads question-over-table bundles (native CSV bundles and adapted
multiple-choice science-exam sets), runs answer systems over question
subsets while timing each question and sampling peak resident memory,
computes precision/recall/F1 at k plus global and inverse-resource
metrics, and emits CSV/JSON/SVG-radar reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import threading
import time
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import psutil

from . import baselines, reader_core, verbalizer
from .table_model import Table, TableParseError, normalize_cell, parse_table

QTYPES = frozenset({"normal", "aggregation", "related", "similar", "listing", "ask", "empty", "other"})
REPORT_QTYPES = ("all", "normal", "aggregation", "related", "similar")
K_VALUES = (1, 3, 5, 10)
K_MAX = 10

_MEMORY_SAMPLE_INTERVAL = 0.1  # seconds


class BundleLoadError(ValueError):
    pass


@dataclass(frozen=True)
class BenchmarkQuestion:
    id: str
    table_id: str
    text: str
    gold_answers: tuple[str, ...]
    qtype: str

    def __post_init__(self):
        if not self.gold_answers:
            raise BundleLoadError(f"question {self.id}: empty gold answer list")
        if self.qtype not in QTYPES:
            raise BundleLoadError(f"question {self.id}: unknown qtype {self.qtype!r}")


@dataclass
class Bundle:
    name: str
    tables: dict[str, Table]
    questions: list[BenchmarkQuestion]
    qtype_distribution: dict[str, int]
    skipped: int = 0


def load_orkgqa(bundle_dir: str | Path) -> Bundle:
    """Load a bundle directory: manifest.json, tables/<id>.csv, questions.jsonl.

    Every question must reference a loaded table; malformed JSON lines and
    dangling table ids raise BundleLoadError naming the offender. When the
    manifest declares a qtype distribution it is checked against the actual.
    """
    bundle_dir = Path(bundle_dir)
    manifest_path = bundle_dir / "manifest.json"
    if not manifest_path.is_file():
        raise BundleLoadError(f"missing manifest.json in {bundle_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    tables: dict[str, Table] = {}
    for entry in manifest.get("tables", []):
        table_id = entry["id"]
        csv_path = bundle_dir / "tables" / entry.get("file", f"{table_id}.csv")
        try:
            tables[table_id] = parse_table(
                csv_path.read_bytes(),
                table_id,
                title=entry.get("title", ""),
                subject_column=entry.get("subject_column", 0),
            )
        except (OSError, TableParseError) as exc:
            raise BundleLoadError(f"table {table_id}: {exc}") from exc

    questions: list[BenchmarkQuestion] = []
    questions_path = bundle_dir / "questions.jsonl"
    if not questions_path.is_file():
        raise BundleLoadError(f"missing questions.jsonl in {bundle_dir}")
    with questions_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BundleLoadError(f"questions.jsonl line {lineno}: {exc}") from exc
            q = BenchmarkQuestion(
                id=str(obj["id"]),
                table_id=str(obj["table_id"]),
                text=obj["question"],
                gold_answers=tuple(obj["answers"]),
                qtype=obj.get("type", "normal"),
            )
            if q.table_id not in tables:
                raise BundleLoadError(
                    f"questions.jsonl line {lineno}: question {q.id} references unknown table {q.table_id!r}"
                )
            questions.append(q)

    distribution = dict(Counter(q.qtype for q in questions))
    declared = manifest.get("qtype_distribution")
    if declared is not None and {k: int(v) for k, v in declared.items()} != distribution:
        raise BundleLoadError(
            f"declared qtype distribution {declared} != actual {distribution}"
        )
    return Bundle(
        name=manifest.get("name", bundle_dir.name),
        tables=tables,
        questions=questions,
        qtype_distribution=distribution,
    )


_CHOICE_COL = re.compile(r"^choice\s*([a-d1-9])$")
_LETTERS = "abcdefghi"


def _tsv_to_table(path: Path, table_id: str) -> Table:
    with path.open(encoding="utf-8", newline="") as fh:
        records = [r for r in csv.reader(fh, delimiter="\t") if r]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\r\n").writerows(records)
    return parse_table(buf.getvalue(), table_id)


def load_tabmcq(dir_path: str | Path) -> Bundle:
    """Adapt a multiple-choice table-QA set: tables/*.tsv plus questions.tsv.

    The question file header must name QUESTION, CHOICE A.. columns, a
    CORRECT CHOICE column, and a RELEVANT TABLE column. Only the correct
    choice is kept as the gold answer; distractors are dropped and every
    question is typed `normal`. Questions with no resolvable correct choice
    (or a missing table) are skipped and counted, never fatal.
    """
    dir_path = Path(dir_path)
    tables: dict[str, Table] = {}
    for tsv in sorted((dir_path / "tables").glob("*.tsv")):
        tables[tsv.stem] = _tsv_to_table(tsv, tsv.stem)

    questions_path = dir_path / "questions.tsv"
    if not questions_path.is_file():
        raise BundleLoadError(f"missing questions.tsv in {dir_path}")
    with questions_path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows:
        raise BundleLoadError("empty questions.tsv")

    header = [re.sub(r"[-_]+", " ", h).strip().lower() for h in rows[0]]
    col: dict[str, int] = {}
    choice_cols: dict[str, int] = {}
    for i, name in enumerate(header):
        m = _CHOICE_COL.match(name)
        if m:
            key = m.group(1)
            choice_cols[_LETTERS[int(key) - 1] if key.isdigit() else key] = i
        elif "question" in name and "question" not in col:
            col["question"] = i
        elif "correct" in name:
            col["correct"] = i
        elif "table" in name and "row" not in name and "col" not in name:
            col["table"] = i
    for required in ("question", "correct", "table"):
        if required not in col:
            raise BundleLoadError(f"questions.tsv header lacks a {required} column: {rows[0]}")
    if not choice_cols:
        raise BundleLoadError(f"questions.tsv header lacks choice columns: {rows[0]}")

    questions: list[BenchmarkQuestion] = []
    skipped = 0
    for n, row in enumerate(rows[1:], start=1):
        if not any(cell.strip() for cell in row):
            continue
        table_id = row[col["table"]].strip()
        marker = row[col["correct"]].strip().lower()
        if marker.isdigit():
            marker = _LETTERS[int(marker) - 1] if 0 < int(marker) <= len(_LETTERS) else marker
        choice_idx = choice_cols.get(marker)
        if choice_idx is None or not row[choice_idx].strip() or table_id not in tables:
            skipped += 1
            continue
        questions.append(
            BenchmarkQuestion(
                id=f"q{n}",
                table_id=table_id,
                text=row[col["question"]],
                gold_answers=(row[choice_idx],),
                qtype="normal",
            )
        )
    return Bundle(
        name=dir_path.name,
        tables=tables,
        questions=questions,
        qtype_distribution=dict(Counter(q.qtype for q in questions)),
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Matching and rank metrics
# ---------------------------------------------------------------------------

def match(candidate: str, gold: str, mode: str = "exact") -> bool:
    """exact: normalized equality; containment: normalized gold appears
    inside the normalized candidate (for sentence-returning systems)."""
    c, g = normalize_cell(candidate), normalize_cell(gold)
    if mode == "exact":
        return c == g
    if mode == "containment":
        return bool(g) and g in c
    raise ValueError(f"unknown match mode {mode!r}")


def _hit_at_k(answers: Sequence[str], golds: Sequence[str], k: int, mode: str) -> bool:
    return any(match(a, g, mode) for a in answers[:k] for g in golds)


def recall_at_k(
    results: Sequence[Sequence[str]], gold: Sequence[Sequence[str]], k: int, mode: str = "exact"
) -> float:
    """Fraction of all questions with a matching answer at rank <= k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not results:
        return 0.0
    hits = sum(1 for answers, golds in zip(results, gold) if _hit_at_k(answers, golds, k, mode))
    return hits / len(results)


def precision_at_k(
    results: Sequence[Sequence[str]], gold: Sequence[Sequence[str]], k: int, mode: str = "exact"
) -> float:
    """Like recall_at_k but over answered questions only (>= 1 returned
    answer); 0 when nothing was answered at all."""
    if k < 1:
        raise ValueError("k must be >= 1")
    answered = sum(1 for answers in results if len(answers) > 0)
    if answered == 0:
        return 0.0
    hits = sum(1 for answers, golds in zip(results, gold) if _hit_at_k(answers, golds, k, mode))
    return hits / answered


def f1_at_k(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def global_metrics(
    results: Sequence[Sequence[str]], gold: Sequence[Sequence[str]], mode: str = "exact"
) -> tuple[float, float, float]:
    """(top-1 hits / all questions, top-10 hits / all questions, their harmonic mean)."""
    if not results:
        return (0.0, 0.0, 0.0)
    total = len(results)
    gp = sum(1 for a, g in zip(results, gold) if _hit_at_k(a, g, 1, mode)) / total
    gr = sum(1 for a, g in zip(results, gold) if _hit_at_k(a, g, K_MAX, mode)) / total
    return (gp, gr, f1_at_k(gp, gr))


def inv_time(avg_times: dict[str, float]) -> dict[str, float]:
    """1 - average time / maximum average time, per system."""
    if any(t < 0 for t in avg_times.values()):
        raise ValueError("times must be >= 0")
    peak = max(avg_times.values(), default=0.0)
    if peak == 0.0:
        raise ValueError("all-zero times: inverse time undefined")
    return {name: 1.0 - t / peak for name, t in avg_times.items()}


def inv_memory(mem: dict[str, float]) -> dict[str, float]:
    """1 - memory / maximum memory, per system."""
    if any(m < 0 for m in mem.values()):
        raise ValueError("memory must be >= 0")
    peak = max(mem.values(), default=0.0)
    if peak == 0.0:
        raise ValueError("all-zero memory: inverse memory undefined")
    return {name: 1.0 - m / peak for name, m in mem.items()}


# ---------------------------------------------------------------------------
# Systems and experiment runner
# ---------------------------------------------------------------------------

class BenchmarkEnv:
    """Per-table artifacts shared by all systems: verbalized contexts,
    candidate pools, and sentence indexes. Built once per bundle, or
    partially supplied from an ingest cache."""

    def __init__(
        self,
        bundle: Bundle,
        contexts: dict[str, verbalizer.TextualContext] | None = None,
        indexes: dict[str, baselines.SentenceIndex] | None = None,
    ):
        self.bundle = bundle
        self.contexts = dict(contexts or {})
        for tid, t in bundle.tables.items():
            if tid not in self.contexts:
                self.contexts[tid] = verbalizer.build_context(t)
        self.pools = {tid: baselines.build_pool(t) for tid, t in bundle.tables.items()}
        self.indexes = dict(indexes or {})
        for tid, ctx in self.contexts.items():
            if tid not in self.indexes:
                self.indexes[tid] = baselines.index_sentences([ctx])
        self.context_cached = True


class QASystem(Protocol):
    name: str
    match_mode: str

    def answer(self, question: BenchmarkQuestion, env: BenchmarkEnv) -> list[str]: ...


class ReaderSystem:
    """The full pipeline behind a chosen Reader implementation."""

    match_mode = "exact"

    def __init__(self, name: str, reader: reader_core.Reader, params: reader_core.ReaderParams | None = None):
        self.name = name
        self.reader = reader
        self.params = params or reader_core.ReaderParams()

    def answer(self, question: BenchmarkQuestion, env: BenchmarkEnv) -> list[str]:
        context = env.contexts[question.table_id]
        candidates = reader_core.read(question.text, context, self.params, self.reader)
        return [c.text for c in candidates]


def _question_seed(base_seed: int, question_id: str) -> int:
    # crc32 keeps the per-question stream stable across runs and platforms
    return (base_seed * 0x9E3779B1 + zlib.crc32(question_id.encode("utf-8"))) & 0xFFFFFFFF


class RandomSystem:
    name = "random"
    match_mode = "exact"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def answer(self, question: BenchmarkQuestion, env: BenchmarkEnv) -> list[str]:
        pool = env.pools[question.table_id]
        return baselines.random_answer(pool, K_MAX, _question_seed(self.seed, question.id))


class RetrievalSystem:
    name = "lucene"
    match_mode = "containment"

    def answer(self, question: BenchmarkQuestion, env: BenchmarkEnv) -> list[str]:
        return baselines.retrieve_answers(question.text, env.indexes[question.table_id], K_MAX)


@dataclass
class RunRecord:
    system: str
    match_mode: str
    question_ids: list[str]
    answers: list[list[str]]  # ranked, truncated to K_MAX
    latencies: list[float]  # seconds, per question
    peak_memory_bytes: int
    workers: int = 1
    context_cached: bool = True
    failures: int = 0


class _MemorySampler:
    """Samples resident memory of this process plus children every 100 ms."""

    def __init__(self):
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self.peak = 0

    def _sample(self):
        try:
            proc = psutil.Process()
            total = proc.memory_info().rss
            for child in proc.children(recursive=True):
                try:
                    total += child.memory_info().rss
                except psutil.Error:
                    pass
            self.peak = max(self.peak, total)
        except psutil.Error:
            pass

    def _run(self):
        while not self._stop.is_set():
            self._sample()
            self._stop.wait(_MEMORY_SAMPLE_INTERVAL)

    def __enter__(self):
        self._sample()
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self._sample()


def filter_questions(bundle: Bundle, qtype_filter: str = "all") -> list[BenchmarkQuestion]:
    if qtype_filter == "all":
        return list(bundle.questions)
    wanted = {t.strip() for t in qtype_filter.split(",")}
    unknown = wanted - QTYPES
    if unknown:
        raise ValueError(f"unknown qtype filter {sorted(unknown)}")
    return [q for q in bundle.questions if q.qtype in wanted]


def run_experiment(
    system: QASystem,
    env: BenchmarkEnv,
    qtype_filter: str = "all",
    workers: int = 1,
) -> RunRecord:
    """Run one system over the filtered question subset.

    Each question is timed individually; a per-question system failure is
    recorded as an empty answer list rather than aborting the run. Peak
    resident memory (including subprocesses) is sampled across the run.
    """
    questions = filter_questions(env.bundle, qtype_filter)
    record = RunRecord(
        system=system.name,
        match_mode=system.match_mode,
        question_ids=[q.id for q in questions],
        answers=[[] for _ in questions],
        latencies=[0.0 for _ in questions],
        peak_memory_bytes=0,
        workers=workers,
        context_cached=env.context_cached,
    )

    def run_one(idx_question):
        idx, question = idx_question
        t0 = time.perf_counter()
        try:
            answers = list(system.answer(question, env))[:K_MAX]
            failed = False
        except Exception:
            answers, failed = [], True
        return idx, answers, time.perf_counter() - t0, failed

    with _MemorySampler() as sampler:
        if workers <= 1:
            outcomes = map(run_one, enumerate(questions))
        else:
            pool = ThreadPoolExecutor(max_workers=workers)
            outcomes = pool.map(run_one, enumerate(questions))
        for idx, answers, latency, failed in outcomes:
            record.answers[idx] = answers
            record.latencies[idx] = latency
            record.failures += int(failed)
        if workers > 1:
            pool.shutdown()
    record.peak_memory_bytes = sampler.peak
    return record


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    bundle: str
    # grid[system][qtype][str(k)] = {"precision": p, "recall": r, "f1": f}
    grid: dict[str, dict[str, dict[str, dict[str, float]]]]
    # systems[name] = global_precision/global_recall/global_f1/inv_time/inv_memory
    systems: dict[str, dict[str, float]]
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "bundle": self.bundle,
            "grid": self.grid,
            "systems": self.systems,
            "meta": self.meta,
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        return cls(
            bundle=payload["bundle"],
            grid=payload["grid"],
            systems=payload["systems"],
            meta=payload.get("meta", {}),
        )


def compute_report(records: list[RunRecord], bundle: Bundle) -> EvalReport:
    """Aggregate run records into the qtype x system x k metric grid plus
    per-system global and inverse-resource scores."""
    by_id = {q.id: q for q in bundle.questions}
    grid: dict[str, dict[str, dict[str, dict[str, float]]]] = {}
    system_stats: dict[str, dict[str, float]] = {}

    for record in records:
        questions = [by_id[qid] for qid in record.question_ids]
        golds = [q.gold_answers for q in questions]
        rows: dict[str, dict[str, dict[str, float]]] = {}
        for qtype in REPORT_QTYPES:
            if qtype == "all":
                idx = list(range(len(questions)))
            else:
                idx = [i for i, q in enumerate(questions) if q.qtype == qtype]
            if not idx:
                continue  # row suppressed
            sub_results = [record.answers[i] for i in idx]
            sub_gold = [golds[i] for i in idx]
            cells = {}
            for k in K_VALUES:
                p = precision_at_k(sub_results, sub_gold, k, record.match_mode)
                r = recall_at_k(sub_results, sub_gold, k, record.match_mode)
                cells[str(k)] = {"precision": p, "recall": r, "f1": f1_at_k(p, r)}
            rows[qtype] = cells
        grid[record.system] = rows

        gp, gr, gf1 = global_metrics(record.answers, golds, record.match_mode)
        system_stats[record.system] = {
            "global_precision": gp,
            "global_recall": gr,
            "global_f1": gf1,
            "avg_time_s": sum(record.latencies) / len(record.latencies) if record.latencies else 0.0,
            "peak_memory_bytes": float(record.peak_memory_bytes),
        }

    times = {name: s["avg_time_s"] for name, s in system_stats.items()}
    mems = {name: s["peak_memory_bytes"] for name, s in system_stats.items()}
    try:
        inv_t = inv_time(times)
    except ValueError:
        inv_t = {name: 0.0 for name in times}
    try:
        inv_m = inv_memory(mems)
    except ValueError:
        inv_m = {name: 0.0 for name in mems}
    for name, stats in system_stats.items():
        stats["inv_time"] = inv_t[name]
        stats["inv_memory"] = inv_m[name]

    meta = {
        "workers": {r.system: r.workers for r in records},
        "context_cached": {r.system: r.context_cached for r in records},
        "match_mode": {r.system: r.match_mode for r in records},
        "failures": {r.system: r.failures for r in records},
    }
    return EvalReport(bundle=bundle.name, grid=grid, systems=system_stats, meta=meta)


GLOBAL_DIMENSIONS = ("global_precision", "global_recall", "global_f1", "inv_time", "inv_memory")

_RADAR_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _radar_svg(report: EvalReport) -> str:
    cx = cy = 210.0
    radius = 140.0
    n = len(GLOBAL_DIMENSIONS)
    angles = [-math.pi / 2 + 2 * math.pi * i / n for i in range(n)]

    def point(i: int, value: float) -> tuple[float, float]:
        return (cx + radius * value * math.cos(angles[i]), cy + radius * value * math.sin(angles[i]))

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 560 420" font-family="sans-serif" font-size="11">'
    ]
    for ring in (0.25, 0.5, 0.75, 1.0):
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in (point(i, ring) for i in range(n)))
        parts.append(f'<polygon points="{pts}" fill="none" stroke="#cccccc" stroke-width="0.5"/>')
    labels = ("Global Precision", "Global Recall", "Global F1", "Inv.Time", "Inv.Memory")
    for i, label in enumerate(labels):
        x, y = point(i, 1.12)
        parts.append(f'<line x1="{cx}" y1="{cy}" x2="{point(i, 1.0)[0]:.1f}" y2="{point(i, 1.0)[1]:.1f}" stroke="#cccccc" stroke-width="0.5"/>')
        parts.append(f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="middle">{label}</text>')
    for si, (name, stats) in enumerate(report.systems.items()):
        color = _RADAR_COLORS[si % len(_RADAR_COLORS)]
        values = [max(0.0, min(1.0, stats[d])) for d in GLOBAL_DIMENSIONS]
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (point(i, v) for i, v in enumerate(values)))
        parts.append(
            f'<polygon points="{pts}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<rect x="440" y="{30 + 18 * si}" width="12" height="12" fill="{color}"/>'
            f'<text x="458" y="{40 + 18 * si}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(report: EvalReport, format: str) -> bytes:
    """Render the report as csv (grid), json (full, round-trips), or svg-radar."""
    if format == "json":
        return report.to_json().encode("utf-8")
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["qtype", "system"]
        header += [f"p@{k}" for k in K_VALUES]
        header += [f"r@{k}" for k in K_VALUES]
        header += [f"f1@{k}" for k in K_VALUES]
        writer.writerow(header)
        for qtype in REPORT_QTYPES:
            for system, rows in report.grid.items():
                if qtype not in rows:
                    continue
                cells = rows[qtype]
                row = [qtype, system]
                row += [repr(cells[str(k)]["precision"]) for k in K_VALUES]
                row += [repr(cells[str(k)]["recall"]) for k in K_VALUES]
                row += [repr(cells[str(k)]["f1"]) for k in K_VALUES]
                writer.writerow(row)
        return buf.getvalue().encode("utf-8")
    if format == "svg-radar":
        return _radar_svg(report).encode("utf-8")
    raise ValueError(f"unknown report format {format!r}")
