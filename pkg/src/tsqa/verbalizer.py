"""Table verbalization: triples, aggregation facts, and aligned text.

A table becomes one subject-predicate-object triple per non-empty,
non-subject cell, then a textual context of one sentence per row followed
by aggregation sentences (max/min/average over numeric columns, most
common value over categorical and boolean-like columns). Every sentence
is tiled by character segments pointing back at the triple or fact it
renders, so downstream readers can resolve answer provenance.
"""

from __future__ import annotations

import re
import statistics
from dataclasses import dataclass

from .table_model import Cell, ColumnKind, Table


class VerbalizeError(ValueError):
    pass


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str
    provenance: tuple[int, int]  # (row index, column index)
    column: str  # raw column name, kept so clause text need not re-derive it

    @property
    def property_phrase(self) -> str:
        return self.column.lower()


@dataclass(frozen=True)
class AggregationFact:
    column: str
    kind: str  # max | min | average | most_common
    value: str
    winner: str | None = None
    support: int = 0

    @property
    def property_phrase(self) -> str:
        return self.column.lower()


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    origin: Triple | AggregationFact


@dataclass(frozen=True)
class Sentence:
    start: int
    end: int
    segments: tuple[Segment, ...]


@dataclass(frozen=True)
class TextualContext:
    text: str
    segments: tuple[Segment, ...]
    table_id: str

    def sentences(self) -> list[Sentence]:
        """Group contiguous segments into sentences.

        Segments tile each sentence exactly; the single space between
        sentences belongs to no segment, so a gap marks a boundary.
        """
        out: list[Sentence] = []
        run: list[Segment] = []
        for seg in self.segments:
            if run and seg.start != run[-1].end:
                out.append(Sentence(run[0].start, run[-1].end, tuple(run)))
                run = []
            run.append(seg)
        if run:
            out.append(Sentence(run[0].start, run[-1].end, tuple(run)))
        return out

    def segment_at(self, pos: int) -> Segment | None:
        for seg in self.segments:
            if seg.start <= pos < seg.end:
                return seg
        return None

    def sentence_text(self, sentence: Sentence) -> str:
        return self.text[sentence.start : sentence.end]


_CAMEL_SPLIT = re.compile(r"[^0-9A-Za-z]+")


def predicate_for(column_name: str) -> str:
    """Render a column name as a camel-case property, e.g. hasDataType."""
    words = [w for w in _CAMEL_SPLIT.split(column_name) if w]
    return "has" + "".join(w[0].upper() + w[1:] for w in words)


def table_to_triples(table: Table) -> list[Triple]:
    """One triple per non-empty non-subject cell, in row-major order."""
    triples: list[Triple] = []
    for i, row in enumerate(table.rows):
        subject = row[table.subject_column]
        for j, cell in enumerate(row):
            if j == table.subject_column or cell.is_empty:
                continue
            if subject.is_empty:
                raise VerbalizeError(f"row {i} has values but no subject (column {table.subject_column})")
            triples.append(
                Triple(
                    subject=subject.raw,
                    predicate=predicate_for(table.columns[j].name),
                    object=cell.raw,
                    provenance=(i, j),
                    column=table.columns[j].name,
                )
            )
    return triples


def triples_to_ntriples(triples: list[Triple]) -> str:
    """Debug dump, one `<subject> <predicate> "<object>" .` line per triple."""
    return "".join(f'<{t.subject}> <{t.predicate}> "{t.object}" .\n' for t in triples)


def _clause(triple: Triple, first: bool) -> str:
    if first:
        return f'{triple.subject}\'s {triple.property_phrase} is "{triple.object}"'
    return f'its {triple.property_phrase} is "{triple.object}"'


def _emit_sentence(
    parts: list[tuple[str, Triple | AggregationFact]],
    text_parts: list[str],
    segments: list[Segment],
    offset: int,
) -> int:
    """Append one sentence built from (clause, origin) parts; segments tile it.

    Each segment runs from its clause start to the next clause start, so the
    joining separators and the final period stay covered.
    """
    n = len(parts)
    starts: list[int] = []
    pos = offset
    for idx, (clause, _) in enumerate(parts):
        starts.append(pos)
        pos += len(clause)
        if idx < n - 1:
            sep = " and " if n == 2 else (", and " if idx == n - 2 else ", ")
            pos += len(sep)
            text_parts.append(clause + sep)
        else:
            pos += 1  # terminal period
            text_parts.append(clause + ".")
    for idx, (_, origin) in enumerate(parts):
        end = starts[idx + 1] if idx < n - 1 else pos
        segments.append(Segment(starts[idx], end, origin))
    return pos


def triples_to_text(triples: list[Triple], group_by_subject: bool = True) -> TextualContext:
    """Render triples as sentences with clause-level segment alignment.

    Grouping joins each row's triples into one sentence (`X's p is "o", its
    p2 is "o2", and its p3 is "o3".`); ungrouped emits one sentence per
    triple. Sentences are separated by a single space.
    """
    text_parts: list[str] = []
    segments: list[Segment] = []
    offset = 0

    groups: list[list[Triple]] = []
    for t in triples:
        if group_by_subject and groups and groups[-1][0].provenance[0] == t.provenance[0]:
            groups[-1].append(t)
        else:
            groups.append([t])

    for gi, group in enumerate(groups):
        if gi > 0:
            text_parts.append(" ")
            offset += 1
        parts = [(_clause(t, first=(k == 0)), t) for k, t in enumerate(group)]
        offset = _emit_sentence(parts, text_parts, segments, offset)

    return TextualContext(text="".join(text_parts), segments=tuple(segments), table_id="")


_NUM_KIND_WORDS = {"max": "maximum", "min": "minimum", "average": "average"}


def render_number(x: float) -> str:
    """Stable short rendering: integers bare, otherwise 12 significant digits."""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.12g}"


def aggregate(table: Table) -> list[AggregationFact]:
    """Column aggregates: max/min/average for numeric columns (max/min carry
    the winning subject), most common value for categorical and boolean-like
    ones. Ties break by first occurrence in row order. The subject column
    names rows and is never aggregated."""
    facts: list[AggregationFact] = []
    for j, column in enumerate(table.columns):
        if j == table.subject_column:
            continue
        cells = [(i, c) for i, c in enumerate(table.column_values(j)) if not c.is_empty]
        if not cells:
            continue
        if column.kind is ColumnKind.NUMERIC:
            facts.extend(_numeric_facts(table, column.name, cells))
        elif column.kind in (ColumnKind.CATEGORICAL, ColumnKind.BOOLEAN_LIKE):
            facts.append(_most_common_fact(column.name, cells))
    return facts


def _numeric_facts(table: Table, name: str, cells: list[tuple[int, Cell]]) -> list[AggregationFact]:
    best = max(cells, key=lambda ic: ic[1].numeric_value)
    worst = min(cells, key=lambda ic: ic[1].numeric_value)
    mean = statistics.fmean(c.numeric_value for _, c in cells)
    return [
        AggregationFact(name, "max", best[1].raw, winner=table.subject(best[0]).raw),
        AggregationFact(name, "min", worst[1].raw, winner=table.subject(worst[0]).raw),
        AggregationFact(name, "average", render_number(mean)),
    ]


def _most_common_fact(name: str, cells: list[tuple[int, Cell]]) -> AggregationFact:
    counts: dict[str, int] = {}
    first_raw: dict[str, str] = {}
    for _, cell in cells:
        key = cell.normalized
        counts[key] = counts.get(key, 0) + 1
        first_raw.setdefault(key, cell.raw)
    # dict preserves insertion order, so max() ties resolve to first occurrence
    winner_key = max(counts, key=counts.get)
    return AggregationFact(name, "most_common", first_raw[winner_key], support=counts[winner_key])


def _aggregation_sentence(fact: AggregationFact) -> str:
    if fact.kind == "most_common":
        return f'The most common {fact.property_phrase} among the papers is "{fact.value}"'
    clause = f'The {_NUM_KIND_WORDS[fact.kind]} {fact.property_phrase} is "{fact.value}"'
    if fact.kind in ("max", "min"):
        clause += f", achieved by {fact.winner}"
    return clause


def build_context(table: Table) -> TextualContext:
    """Full verbalization: per-row sentences, then aggregation sentences."""
    row_context = triples_to_text(table_to_triples(table), group_by_subject=True)
    text_parts = [row_context.text]
    segments = list(row_context.segments)
    offset = len(row_context.text)

    for fact in aggregate(table):
        if offset > 0:
            text_parts.append(" ")
            offset += 1
        offset = _emit_sentence([(_aggregation_sentence(fact), fact)], text_parts, segments, offset)

    return TextualContext(text="".join(text_parts), segments=tuple(segments), table_id=table.id)
