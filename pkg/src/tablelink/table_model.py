"""Tables, mentions and the structural context of a cell."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

Cell = tuple[int, int]


class TableError(ValueError):
    """Raised for malformed tables or out-of-range cell references."""


@dataclass(frozen=True)
class Table:
    """An M x N grid of cell strings plus caption, page title and headers.

    ``gold_links`` maps (row, col) to an entity id; cells absent from the
    map are NIL.  Missing metadata is the empty string.
    """

    id: str
    cells: tuple[tuple[str, ...], ...]
    headers: tuple[str, ...]
    caption: str = ""
    page_title: str = ""
    gold_links: Mapping[Cell, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        cells = tuple(tuple(str(v) for v in row) for row in self.cells)
        headers = tuple(str(h) for h in self.headers)
        n = len(headers)
        for i, row in enumerate(cells):
            if len(row) != n:
                raise TableError(f"table {self.id!r}: row {i} has {len(row)} cells, expected {n}")
        links = {}
        for (i, j), ent in self.gold_links.items():
            if not (0 <= i < len(cells) and 0 <= j < n):
                raise TableError(f"table {self.id!r}: link at ({i}, {j}) is outside the grid")
            if ent is not None:
                links[(int(i), int(j))] = str(ent)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "headers", headers)
        object.__setattr__(self, "caption", self.caption or "")
        object.__setattr__(self, "page_title", self.page_title or "")
        object.__setattr__(self, "gold_links", dict(sorted(links.items())))

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        return len(self.headers)

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    def gold(self, row: int, col: int) -> str | None:
        return self.gold_links.get((row, col))

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "page_title": self.page_title,
            "caption": self.caption,
            "headers": list(self.headers),
            "rows": [list(r) for r in self.cells],
            "links": {f"{i},{j}": e for (i, j), e in self.gold_links.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Table":
        try:
            links = {_parse_key(k): v for k, v in (obj.get("links") or {}).items()}
            return cls(
                id=str(obj["id"]),
                cells=obj.get("rows") or [],
                headers=obj.get("headers") or [],
                caption=obj.get("caption") or "",
                page_title=obj.get("page_title") or "",
                gold_links=links,
            )
        except (KeyError, TypeError) as exc:
            raise TableError(f"malformed table record: {exc}") from exc


def _parse_key(key: str) -> Cell:
    try:
        i, j = key.split(",")
        return int(i), int(j)
    except ValueError as exc:
        raise TableError(f"bad link key {key!r}, expected 'row,col'") from exc


@dataclass(frozen=True)
class Mention:
    table_id: str
    row: int
    col: int
    value: str

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.table_id, self.row, self.col)


@dataclass(frozen=True)
class StructuralContext:
    same_row: tuple[tuple[int, str], ...]
    same_col: tuple[tuple[int, str], ...]
    header: str
    caption: str
    page_title: str


def mention_iter(table: Table) -> list[Mention]:
    """Every non-empty cell as a mention, in row-major order."""
    return [
        Mention(table.id, i, j, value)
        for i, row in enumerate(table.cells)
        for j, value in enumerate(row)
        if value != ""
    ]


def structural_context(table: Table, row: int, col: int) -> StructuralContext:
    if not (0 <= row < table.n_rows and 0 <= col < table.n_cols):
        raise TableError(f"cell ({row}, {col}) outside {table.n_rows}x{table.n_cols} table {table.id!r}")
    same_row = tuple((j, v) for j, v in enumerate(table.cells[row]) if j != col and v != "")
    same_col = tuple((i, r[col]) for i, r in enumerate(table.cells) if i != row and r[col] != "")
    return StructuralContext(
        same_row=same_row,
        same_col=same_col,
        header=table.headers[col],
        caption=table.caption,
        page_title=table.page_title,
    )


def read_tables(path) -> list[Table]:
    tables = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                tables.append(Table.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise TableError(f"{path}:{lineno}: {exc}") from exc
    return tables


def write_tables(path, tables) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tables:
            fh.write(json.dumps(t.to_json(), ensure_ascii=False) + "\n")
