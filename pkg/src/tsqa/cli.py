"""Command-line entry point: ingest tables, ask ad-hoc questions, run benchmarks.

Machine-readable output goes to stdout (or files); diagnostics go to stderr.
Exit code is 0 only when no errors occurred.
"""

from __future__ import annotations

import json
import os
import shlex
import sys
from pathlib import Path

import click

from . import baselines, eval_harness, reader_core, verbalizer
from .table_model import Table, TableParseError, parse_table

ADAPTER_CMD_ENV = "TSQA_ADAPTER_CMD"

_SYSTEM_NAMES = ("random", "lucene", "lexical", "external")


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Question answering over tabular views of scholarly knowledge."""


def _load_manifest_entries(manifest_path: str | None) -> dict[str, dict]:
    if not manifest_path:
        return {}
    data = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    entries = data.get("tables", data) if isinstance(data, dict) else data
    if isinstance(entries, dict):
        return {str(k): dict(v) for k, v in entries.items()}
    return {str(e["id"]): dict(e) for e in entries}


def _collect_csvs(paths: tuple[str, ...]) -> list[Path]:
    out: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            out.extend(sorted(path.glob("*.csv")))
        else:
            out.append(path)
    return out


def _serialize_origin(origin) -> dict:
    if isinstance(origin, verbalizer.Triple):
        return {
            "kind": "triple",
            "subject": origin.subject,
            "predicate": origin.predicate,
            "object": origin.object,
            "row": origin.provenance[0],
            "column_index": origin.provenance[1],
            "column": origin.column,
        }
    return {
        "kind": "aggregation",
        "agg": origin.kind,
        "column": origin.column,
        "value": origin.value,
        "winner": origin.winner,
        "support": origin.support,
    }


def _context_json(ctx: verbalizer.TextualContext) -> str:
    payload = {
        "table_id": ctx.table_id,
        "text": ctx.text,
        "segments": [
            {"start": s.start, "end": s.end, "origin": _serialize_origin(s.origin)}
            for s in ctx.segments
        ],
    }
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2)


def _deserialize_origin(obj: dict):
    if obj["kind"] == "triple":
        return verbalizer.Triple(
            subject=obj["subject"],
            predicate=obj["predicate"],
            object=obj["object"],
            provenance=(obj["row"], obj["column_index"]),
            column=obj["column"],
        )
    return verbalizer.AggregationFact(
        column=obj["column"],
        kind=obj["agg"],
        value=obj["value"],
        winner=obj["winner"],
        support=obj["support"],
    )


def _context_from_json(text: str) -> verbalizer.TextualContext:
    payload = json.loads(text)
    segments = tuple(
        verbalizer.Segment(s["start"], s["end"], _deserialize_origin(s["origin"]))
        for s in payload["segments"]
    )
    return verbalizer.TextualContext(
        text=payload["text"], segments=segments, table_id=payload["table_id"]
    )


@main.command()
@click.argument("paths", nargs=-1, required=True)
@click.option("--manifest", default=None, help="JSON manifest with per-table title/subject_column.")
@click.option("--out", "out_dir", default="tsqa_store", show_default=True, help="Store directory.")
@click.option("--dump-triples", is_flag=True, help="Also write N-Triples-style debug dumps.")
def ingest(paths, manifest, out_dir, dump_triples):
    """Parse CSV tables, build verbalized contexts, and cache them."""
    csv_paths = _collect_csvs(paths)
    if not csv_paths:
        _fail("no tables found")
    entries = _load_manifest_entries(manifest)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    contexts = []
    errors = 0
    total_triples = total_rows = total_aggs = 0
    for csv_path in csv_paths:
        table_id = csv_path.stem
        entry = entries.get(table_id, {})
        try:
            table = parse_table(
                csv_path.read_bytes(),
                table_id,
                title=entry.get("title", ""),
                subject_column=entry.get("subject_column", 0),
            )
            triples = verbalizer.table_to_triples(table)
            ctx = verbalizer.build_context(table)
        except (OSError, TableParseError, verbalizer.VerbalizeError) as exc:
            click.echo(f"error: {csv_path}: {exc}", err=True)
            errors += 1
            continue
        n_rows = len(table.rows)
        n_aggs = len(verbalizer.aggregate(table))
        total_triples += len(triples)
        total_rows += n_rows
        total_aggs += n_aggs
        contexts.append(ctx)
        (out / f"{table_id}.csv").write_text(table.to_csv(), encoding="utf-8")
        (out / f"{table_id}.context.json").write_text(_context_json(ctx), encoding="utf-8")
        (out / f"{table_id}.context.txt").write_text(ctx.text, encoding="utf-8")
        baselines.index_sentences([ctx]).save(out / f"{table_id}.index.json")
        if dump_triples:
            (out / f"{table_id}.triples.nt").write_text(
                verbalizer.triples_to_ntriples(triples), encoding="utf-8"
            )
    if contexts:
        baselines.index_sentences(contexts).save(out / "index.json")
    click.echo(
        f"{len(contexts)} table(s), {total_triples} triples, "
        f"{total_rows} row sentences, {total_aggs} aggregation sentences"
    )
    if errors:
        sys.exit(1)


def _resolve_table(table_ref: str, store: str) -> Table:
    path = Path(table_ref)
    if path.suffix == ".csv" and path.is_file():
        return parse_table(path.read_bytes(), path.stem)
    store_csv = Path(store) / f"{table_ref}.csv"
    if store_csv.is_file():
        return parse_table(store_csv.read_bytes(), table_ref)
    raise TableParseError(f"unknown table {table_ref!r} (no such file or store entry)")


def _reader_params(max_seq_len, doc_stride, top_k, max_answer_len, max_question_len):
    return reader_core.ReaderParams(
        max_seq_len=max_seq_len,
        doc_stride=doc_stride,
        top_k=top_k,
        max_answer_len=max_answer_len,
        max_question_len=max_question_len,
    )


def _make_reader(reader_name: str, adapter_cmd: str | None):
    if reader_name == "lexical":
        return reader_core.LexicalReader()
    if reader_name == "external":
        cmd = adapter_cmd or os.environ.get(ADAPTER_CMD_ENV)
        if not cmd:
            _fail(f"--reader external requires --adapter-cmd or ${ADAPTER_CMD_ENV}")
        return reader_core.PerWorkerExternalReader(shlex.split(cmd))
    _fail(f"unknown reader {reader_name!r} (valid: lexical, external)")


def _provenance_note(provenance) -> str:
    if isinstance(provenance, verbalizer.Triple):
        row, _ = provenance.provenance
        return f"row {row}, column {provenance.column!r}"
    if isinstance(provenance, verbalizer.AggregationFact):
        return f"aggregation {provenance.kind} over {provenance.column!r}"
    return "unresolved"


@main.command()
@click.argument("question")
@click.option("--table", "table_ref", required=True, help="CSV path or ingested table id.")
@click.option("--store", default="tsqa_store", show_default=True)
@click.option("--reader", "reader_name", default="lexical", show_default=True,
              type=click.Choice(["lexical", "external"]))
@click.option("--adapter-cmd", default=None, help="Adapter argv for --reader external.")
@click.option("--k", "top_k", default=10, show_default=True)
@click.option("--max-seq-len", default=512, show_default=True)
@click.option("--doc-stride", default=128, show_default=True)
@click.option("--max-answer-len", default=15, show_default=True)
@click.option("--max-question-len", default=64, show_default=True)
def ask(question, table_ref, store, reader_name, adapter_cmd, top_k,
        max_seq_len, doc_stride, max_answer_len, max_question_len):
    """Answer one question over one table, printing ranked candidates."""
    try:
        table = _resolve_table(table_ref, store)
        context = verbalizer.build_context(table)
    except (TableParseError, verbalizer.VerbalizeError, OSError) as exc:
        _fail(str(exc))
    params = _reader_params(max_seq_len, doc_stride, top_k, max_answer_len, max_question_len)
    reader = _make_reader(reader_name, adapter_cmd)
    try:
        candidates = reader_core.read(question, context, params, reader)
    except reader_core.ReaderUnavailableError as exc:
        _fail(f"reader unavailable: {exc}")
    finally:
        closer = getattr(reader, "close", None)
        if closer is not None:
            closer()
    for rank, cand in enumerate(candidates, start=1):
        click.echo(f"{rank}. {cand.text}  [score={cand.score:.4f}; {_provenance_note(cand.provenance)}]")
    if not candidates:
        click.echo("no answer", err=True)


def _build_systems(names: list[str], seed: int, adapter_cmd: str | None, params, match_override):
    systems = []
    for name in names:
        if name == "random":
            system = eval_harness.RandomSystem(seed=seed)
        elif name in ("lucene", "retrieval"):
            system = eval_harness.RetrievalSystem()
        elif name == "lexical":
            system = eval_harness.ReaderSystem("lexical", reader_core.LexicalReader(), params)
        elif name == "external":
            reader = _make_reader("external", adapter_cmd)
            system = eval_harness.ReaderSystem("external", reader, params)
        else:
            _fail(f"unknown system {name!r} (valid: {', '.join(_SYSTEM_NAMES)})")
        if match_override:
            system.match_mode = match_override
        systems.append(system)
    return systems


def _print_grid(report: eval_harness.EvalReport, ks: list[int]):
    cols = [f"P@{k}" for k in ks] + [f"R@{k}" for k in ks] + [f"F1@{k}" for k in ks]
    click.echo(f"{'qtype':<12} {'system':<10} " + " ".join(f"{c:>6}" for c in cols))
    for qtype in eval_harness.REPORT_QTYPES:
        for system, rows in report.grid.items():
            if qtype not in rows:
                continue
            cells = rows[qtype]
            values = [cells[str(k)]["precision"] for k in ks]
            values += [cells[str(k)]["recall"] for k in ks]
            values += [cells[str(k)]["f1"] for k in ks]
            click.echo(f"{qtype:<12} {system:<10} " + " ".join(f"{v:6.2f}" for v in values))


@main.command()
@click.option("--bundle", required=True, help="Benchmark bundle directory.")
@click.option("--bundle-format", default="orkgqa", show_default=True,
              type=click.Choice(["orkgqa", "tabmcq"]))
@click.option("--systems", default="random,lucene,lexical", show_default=True)
@click.option("--qtype", default="all", show_default=True)
@click.option("--k", "k_list", default="1,3,5,10", show_default=True)
@click.option("--match", "match_override", default=None,
              type=click.Choice(["exact", "containment"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--format", "formats", default="csv,json", show_default=True,
              help="Comma list of csv,json,svg.")
@click.option("--out", "out_dir", default="tsqa_reports", show_default=True)
@click.option("--store", default=None,
              help="Ingest cache directory; reuses stored contexts and indexes.")
@click.option("--adapter-cmd", default=None)
@click.option("--max-seq-len", default=512, show_default=True)
@click.option("--doc-stride", default=128, show_default=True)
@click.option("--max-answer-len", default=15, show_default=True)
@click.option("--max-question-len", default=64, show_default=True)
def bench(bundle, bundle_format, systems, qtype, k_list, match_override, seed, workers,
          formats, out_dir, store, adapter_cmd, max_seq_len, doc_stride, max_answer_len,
          max_question_len):
    """Benchmark systems over a bundle and emit CSV/JSON/SVG reports."""
    try:
        ks = [int(k.strip()) for k in k_list.split(",") if k.strip()]
    except ValueError:
        _fail(f"bad --k list {k_list!r}")
    loader = eval_harness.load_orkgqa if bundle_format == "orkgqa" else eval_harness.load_tabmcq
    try:
        bench_bundle = loader(bundle)
    except eval_harness.BundleLoadError as exc:
        _fail(str(exc))
    params = _reader_params(max_seq_len, doc_stride, 10, max_answer_len, max_question_len)
    names = [s.strip() for s in systems.split(",") if s.strip()]
    system_objs = _build_systems(names, seed, adapter_cmd, params, match_override)

    cached_contexts, cached_indexes = {}, {}
    if store:
        for tid in bench_bundle.tables:
            ctx_path = Path(store) / f"{tid}.context.json"
            idx_path = Path(store) / f"{tid}.index.json"
            if ctx_path.is_file():
                cached_contexts[tid] = _context_from_json(ctx_path.read_text(encoding="utf-8"))
            if idx_path.is_file():
                cached_indexes[tid] = baselines.SentenceIndex.load(idx_path)
    env = eval_harness.BenchmarkEnv(bench_bundle, contexts=cached_contexts, indexes=cached_indexes)
    records = []
    for system in system_objs:
        click.echo(f"running {system.name} ...", err=True)
        try:
            records.append(eval_harness.run_experiment(system, env, qtype_filter=qtype, workers=workers))
        except ValueError as exc:
            _fail(str(exc))
    for system in system_objs:
        closer = getattr(getattr(system, "reader", None), "close", None)
        if closer is not None:
            closer()

    report = eval_harness.compute_report(records, bench_bundle)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wanted = {f.strip() for f in formats.split(",") if f.strip()}
    unknown = wanted - {"csv", "json", "svg"}
    if unknown:
        _fail(f"unknown report format(s) {sorted(unknown)}")
    if "csv" in wanted:
        (out / "report.csv").write_bytes(eval_harness.emit_report(report, "csv"))
    if "json" in wanted:
        (out / "report.json").write_bytes(eval_harness.emit_report(report, "json"))
    if "svg" in wanted:
        (out / "report.svg").write_bytes(eval_harness.emit_report(report, "svg-radar"))
    _print_grid(report, ks)


if __name__ == "__main__":
    main()
