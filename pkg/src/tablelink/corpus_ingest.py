"""Cleaning, link denoising and filtering of raw table dumps."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Any, Iterable, Mapping

from .table_model import Table, TableError, _parse_key, mention_iter
from .text import clean_text

MAX_CELLS = 500
MAX_CANDIDATES = 1800
MAX_LENGTH_DIFF = 10

# filter_table reasons
KEEP = "kept"
TOO_MANY_CELLS = "too_many_cells"
NO_LINKS = "no_links"
CANDIDATE_BOUNDS = "candidate_bounds"


@dataclass
class FilterReport:
    kept: int = 0
    dropped_too_many_cells: int = 0
    dropped_no_links: int = 0
    dropped_candidate_bounds: int = 0
    links_denoised: int = 0

    @property
    def total(self) -> int:
        return self.kept + self.dropped_too_many_cells + self.dropped_no_links + self.dropped_candidate_bounds

    def record(self, reason: str) -> None:
        if reason == KEEP:
            self.kept += 1
        else:
            attr = f"dropped_{reason}"
            setattr(self, attr, getattr(self, attr) + 1)

    def merge(self, other: "FilterReport") -> "FilterReport":
        return FilterReport(**{k: v + getattr(other, k) for k, v in asdict(self).items()})

    def to_json(self) -> dict[str, int]:
        return {**asdict(self), "total": self.total}


@dataclass(frozen=True)
class SplitStats:
    tables: int
    nil_mentions: int
    total_mentions: int

    @property
    def nil_fraction(self) -> float:
        return self.nil_mentions / self.total_mentions if self.total_mentions else 0.0


def clean_table(raw: Mapping[str, Any] | Table, id_map: Mapping[str, str] | None = None) -> Table:
    """Normalise a raw table record into a :class:`Table`.

    ``raw`` follows the table JSON-lines schema, except that a link value
    may be a list of targets (the first one is kept).  With ``id_map``,
    link targets are translated through it and unmapped targets become NIL.
    Later duplicates of a cleaned cell value are blanked along with their link.
    """
    if isinstance(raw, Table):
        raw = raw.to_json()
    rows = raw.get("rows")
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise TableError(f"table {raw.get('id')!r}: 'rows' must be a list of lists")
    headers = raw.get("headers")
    if headers is None:
        headers = [""] * (len(rows[0]) if rows else 0)

    links: dict[tuple[int, int], str] = {}
    for key, target in (raw.get("links") or {}).items():
        if isinstance(target, (list, tuple)):
            target = target[0] if target else None
        if target is None:
            continue
        if id_map is not None:
            target = id_map.get(target)
            if target is None:
                continue
        links[_parse_key(key)] = str(target)

    cells = [[clean_text(str(v)) for v in row] for row in rows]
    seen: set[str] = set()
    for i, row in enumerate(cells):
        for j, value in enumerate(row):
            if value == "":
                links.pop((i, j), None)
            elif value in seen:
                row[j] = ""
                links.pop((i, j), None)
            else:
                seen.add(value)

    return Table(
        id=str(raw.get("id", "")),
        cells=cells,
        headers=[clean_text(str(h)) for h in headers],
        caption=clean_text(str(raw.get("caption") or "")),
        page_title=clean_text(str(raw.get("page_title") or "")),
        gold_links=links,
    )


def denoise_links(table: Table, entity_names: Mapping[str, str]) -> tuple[Table, int]:
    """Drop gold links where cell and entity name lengths differ by more than 10 characters."""
    kept = {}
    for (i, j), ent in table.gold_links.items():
        if ent not in entity_names:
            raise KeyError(f"table {table.id!r}: link to unknown entity {ent!r}")
        if abs(len(table.cells[i][j]) - len(clean_text(entity_names[ent]))) <= MAX_LENGTH_DIFF:
            kept[(i, j)] = ent
    removed = len(table.gold_links) - len(kept)
    if not removed:
        return table, 0
    return Table(table.id, table.cells, table.headers, table.caption, table.page_title, kept), removed


def filter_table(table: Table, total_candidates: int) -> tuple[bool, str]:
    if table.n_cells > MAX_CELLS:
        return False, TOO_MANY_CELLS
    if not table.gold_links:
        return False, NO_LINKS
    if total_candidates == 0 or total_candidates > MAX_CANDIDATES:
        return False, CANDIDATE_BOUNDS
    return True, KEEP


def split_stats(corpus: Iterable[Table]) -> SplitStats:
    tables = nil = total = 0
    for t in corpus:
        tables += 1
        for m in mention_iter(t):
            total += 1
            if (m.row, m.col) not in t.gold_links:
                nil += 1
    return SplitStats(tables=tables, nil_mentions=nil, total_mentions=total)


def read_id_map(path) -> dict[str, str]:
    """Two-column TSV: source link target, KB entity id."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated columns")
            mapping[parts[0]] = parts[1]
    return mapping


def ingest(raw_records: Iterable[Mapping[str, Any]], kb, gazetteer, index, k: int,
           id_map: Mapping[str, str] | None = None) -> tuple[list[Table], FilterReport]:
    """clean -> denoise -> candidates -> filter over a stream of raw tables."""
    from .candidate_gen import generate_candidates

    names = {e.id: e.name for e in kb}
    report = FilterReport()
    kept = []
    for raw in raw_records:
        table = clean_table(raw, id_map)
        table, removed = denoise_links(table, names)
        report.links_denoised += removed
        total = sum(len(generate_candidates(m, gazetteer, index, k).candidates) for m in mention_iter(table))
        keep, reason = filter_table(table, total)
        report.record(reason)
        if keep:
            kept.append(table)
    return kept, report


def read_raw(path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
