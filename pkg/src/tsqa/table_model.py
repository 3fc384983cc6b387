"""Typed in-memory model for CSV tables.

Parses comma-delimited exports (header row first) into immutable tables
with per-column kind inference and normalized cell values. The subject
column names each row's subject and defaults to the first column.
"""

from __future__ import annotations

import csv
import io
import re
import string
from dataclasses import dataclass
from enum import Enum


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    BOOLEAN_LIKE = "boolean-like"
    FREE_TEXT = "free-text"


class TableParseError(ValueError):
    """Raised for structurally invalid CSV input; carries the data row number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


_WS_RE = re.compile(r"\s+")
# Edge trim covers ASCII punctuation plus common typographic quotes/dashes.
_EDGE_CHARS = string.punctuation + "“”‘’«»„…–—"
_ARTICLES = ("a", "an", "the")

# Optional sign, optional thousands separators, optional decimals, optional
# trailing unit token. The unit is recorded verbatim, never interpreted.
_NUMERIC_RE = re.compile(
    r"^(?P<sign>[+-])?"
    r"(?P<num>(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|\.\d+)"
    r"(?:\s*(?P<unit>[A-Za-z%‰°µμ/]+))?$"
)

_BOOLEAN_VOCAB = frozenset({"yes", "no", "true", "false", "partially"})

# Columns stay categorical up to this many distinct values even when every
# value is unique; scholarly tables rarely repeat short labels.
_CATEGORICAL_DISTINCT_CAP = 50


def normalize_cell(raw: str) -> str:
    """Canonical form used for answer matching: lowercase, edge punctuation
    stripped, whitespace collapsed, leading articles dropped. Idempotent."""
    s = _WS_RE.sub(" ", raw.lower()).strip()
    prev = None
    while s != prev:
        prev = s
        s = s.strip(_EDGE_CHARS).strip()
        head, _, tail = s.partition(" ")
        if head in _ARTICLES:
            s = tail if tail else ""
    return s


def parse_numeric(raw: str) -> tuple[float, str] | None:
    """Parse a cell under the numeric grammar, returning (value, unit) or None."""
    m = _NUMERIC_RE.match(raw.strip())
    if m is None:
        return None
    value = float(m.group("num").replace(",", ""))
    if m.group("sign") == "-":
        value = -value
    return value, m.group("unit") or ""


@dataclass(frozen=True)
class Cell:
    raw: str
    normalized: str
    numeric_value: float | None = None
    unit: str = ""

    @classmethod
    def from_raw(cls, raw: str) -> "Cell":
        parsed = parse_numeric(raw) if raw.strip() else None
        if parsed is None:
            return cls(raw=raw, normalized=normalize_cell(raw))
        return cls(raw=raw, normalized=normalize_cell(raw), numeric_value=parsed[0], unit=parsed[1])

    @property
    def is_empty(self) -> bool:
        return not self.raw.strip()


@dataclass(frozen=True)
class Column:
    name: str
    kind: ColumnKind


@dataclass(frozen=True)
class Table:
    id: str
    title: str
    subject_column: int
    columns: tuple[Column, ...]
    rows: tuple[tuple[Cell, ...], ...]

    def __post_init__(self):
        if not 0 <= self.subject_column < len(self.columns):
            raise TableParseError(
                f"subject column {self.subject_column} out of range for {len(self.columns)} columns"
            )
        for i, row in enumerate(self.rows, start=1):
            if len(row) != len(self.columns):
                raise TableParseError(
                    f"row {i} has {len(row)} cells, expected {len(self.columns)}", row=i
                )

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_values(self, index: int) -> list[Cell]:
        return [row[index] for row in self.rows]

    def subject(self, row_index: int) -> Cell:
        return self.rows[row_index][self.subject_column]

    def to_csv(self) -> str:
        """Serialize back to RFC-4180 CSV (header + raw cell values)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.column_names)
        for row in self.rows:
            writer.writerow([cell.raw for cell in row])
        return buf.getvalue()


def infer_column_kind(values: list[str]) -> ColumnKind:
    """Classify one column's raw values.

    Numeric wins when every non-empty value parses under the numeric grammar,
    then boolean-like for the fixed yes/no/true/false/partially vocabulary.
    Short enumerable label sets are categorical; only high-cardinality columns
    fall through to free-text.
    """
    non_empty = [v for v in values if v.strip()]
    if not non_empty:
        return ColumnKind.FREE_TEXT
    if all(parse_numeric(v) is not None for v in non_empty):
        return ColumnKind.NUMERIC
    normalized = [normalize_cell(v) for v in non_empty]
    if all(v in _BOOLEAN_VOCAB for v in normalized):
        return ColumnKind.BOOLEAN_LIKE
    distinct = len(set(normalized))
    if distinct <= _CATEGORICAL_DISTINCT_CAP or distinct <= 0.5 * len(non_empty):
        return ColumnKind.CATEGORICAL
    return ColumnKind.FREE_TEXT


def parse_table(
    csv_text: bytes | str,
    table_id: str,
    *,
    title: str = "",
    subject_column: int = 0,
) -> Table:
    """Parse header-first CSV into a Table with inferred column kinds.

    Raises TableParseError for empty input, ragged rows (with the 1-based
    data row number), or duplicate/empty column names.
    """
    if isinstance(csv_text, bytes):
        text = csv_text.decode("utf-8-sig")
    else:
        text = csv_text.lstrip("﻿")
    if not text.strip():
        raise TableParseError("empty CSV input")

    records = list(csv.reader(io.StringIO(text)))
    records = [r for r in records if r]  # csv yields [] for blank trailing lines
    header = records[0]

    seen: dict[str, str] = {}
    for name in header:
        # lighter than normalize_cell: article stripping would empty names like "A"
        key = _WS_RE.sub(" ", name.lower()).strip()
        if not key:
            raise TableParseError(f"empty column name in header: {header!r}")
        if key in seen:
            raise TableParseError(f"duplicate column name {name!r} (collides with {seen[key]!r})")
        seen[key] = name

    raw_rows = []
    for i, record in enumerate(records[1:], start=1):
        if len(record) != len(header):
            raise TableParseError(
                f"row {i} has {len(record)} cells, expected {len(header)}", row=i
            )
        raw_rows.append(record)

    columns = tuple(
        Column(name=name, kind=infer_column_kind([row[j] for row in raw_rows]))
        for j, name in enumerate(header)
    )
    rows = tuple(tuple(Cell.from_raw(v) for v in row) for row in raw_rows)
    return Table(id=table_id, title=title, subject_column=subject_column, columns=columns, rows=rows)
