"""Candidate entities per mention: gazetteer hits first, then BM25."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .kb_store import Bm25Index, Gazetteer
from .table_model import Mention, Table, mention_iter

GAZETTEER = "gazetteer"
BM25 = "bm25"
DEFAULT_K = 20

MentionKey = tuple[str, int, int]


@dataclass(frozen=True)
class Candidate:
    id: str
    source: str
    score: float


@dataclass(frozen=True)
class CandidateSet:
    mention: MentionKey
    candidates: tuple[Candidate, ...]

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.candidates]

    def __len__(self) -> int:
        return len(self.candidates)

    def to_json(self) -> dict:
        table_id, row, col = self.mention
        return {
            "table_id": table_id,
            "row": row,
            "col": col,
            # gazetteer hits carry an infinite ordering score, written as null
            "candidates": [
                {"id": c.id, "source": c.source, "score": None if math.isinf(c.score) else c.score}
                for c in self.candidates
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CandidateSet":
        cands = tuple(
            Candidate(c["id"], c["source"], math.inf if c.get("score") is None else float(c["score"]))
            for c in obj["candidates"]
        )
        return cls((str(obj["table_id"]), int(obj["row"]), int(obj["col"])), cands)


@dataclass(frozen=True)
class RecallStat:
    hits: int
    linkable: int

    @property
    def p_e(self) -> float:
        return self.hits / self.linkable

    def to_json(self) -> dict:
        return {"hits": self.hits, "linkable": self.linkable, "p_e": self.p_e}


def gazetteer_lookup(cell_value: str, gaz: Gazetteer) -> set[str]:
    return gaz.lookup(cell_value)


def bm25_search(cell_value: str, index: Bm25Index, k: int) -> list[tuple[str, float]]:
    """Top-k documents with a positive score; ties go to the smaller id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = [(d, s) for d, s in index.scores(cell_value).items() if s > 0.0]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def generate_candidates(mention: Mention, gaz: Gazetteer, index: Bm25Index | None, k: int = DEFAULT_K) -> CandidateSet:
    """Merge gazetteer ids (sorted) with BM25 hits not already present, truncated to k.

    ``index=None`` gives gazetteer-only retrieval.
    """
    cands = [Candidate(e, GAZETTEER, math.inf) for e in sorted(gazetteer_lookup(mention.value, gaz))]
    if index is not None and len(cands) < k:
        present = {c.id for c in cands}
        for doc, score in bm25_search(mention.value, index, k):
            if doc not in present:
                cands.append(Candidate(doc, BM25, score))
    return CandidateSet(mention.key, tuple(cands[:k]))


def candidates_for_tables(tables: Iterable[Table], gaz: Gazetteer, index: Bm25Index | None,
                          k: int = DEFAULT_K) -> dict[MentionKey, CandidateSet]:
    out = {}
    for t in tables:
        for m in mention_iter(t):
            out[m.key] = generate_candidates(m, gaz, index, k)
    return out


def recall_at(candidate_sets: Mapping[MentionKey, CandidateSet], gold_links: Mapping[MentionKey, str | None]) -> RecallStat:
    """P_E: share of linkable mentions whose gold entity was retrieved.

    Mentions missing from ``candidate_sets`` count as empty sets.
    """
    hits = linkable = 0
    for key, gold in gold_links.items():
        if gold is None:
            continue
        linkable += 1
        cs = candidate_sets.get(key)
        if cs is not None and gold in cs.ids:
            hits += 1
    if linkable == 0:
        raise ValueError("no linkable mentions")
    return RecallStat(hits, linkable)


def recall_curve(candidate_sets: Mapping[MentionKey, CandidateSet], gold_links: Mapping[MentionKey, str | None],
                 ks: Iterable[int]) -> dict[int, float]:
    """P_E when each candidate list is cut to its first k entries."""
    out = {}
    for k in ks:
        cut = {key: CandidateSet(key, cs.candidates[:k]) for key, cs in candidate_sets.items()}
        out[k] = recall_at(cut, gold_links).p_e
    return out


def gold_map(tables: Iterable[Table]) -> dict[MentionKey, str | None]:
    """Gold entity (or None for NIL) for every mention of every table."""
    return {m.key: t.gold(m.row, m.col) for t in tables for m in mention_iter(t)}


def write_candidates(path, candidate_sets: Mapping[MentionKey, CandidateSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(candidate_sets):
            fh.write(json.dumps(candidate_sets[key].to_json(), ensure_ascii=False) + "\n")


def read_candidates(path) -> dict[MentionKey, CandidateSet]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                cs = CandidateSet.from_json(json.loads(line))
                out[cs.mention] = cs
    return out
