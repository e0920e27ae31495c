"""Target-KB entities, the alias gazetteer and a BM25 inverted index."""

from __future__ import annotations

import json
import math
from bisect import insort
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .text import clean_text, tokenize

SNAPSHOT_FORMAT = "tablelink-index"
SNAPSHOT_VERSION = 1


class KbError(ValueError):
    pass


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    description: str = ""
    aliases: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise KbError(f"entity {self.id!r} has an empty name")
        object.__setattr__(self, "aliases", tuple(self.aliases))

    def to_json(self) -> dict:
        return {"id": self.id, "name": self.name, "description": self.description, "aliases": list(self.aliases)}


class KbStore:
    """Entities keyed by id, kept in insertion order."""

    def __init__(self, entities: Iterable[Entity] = ()):
        self._by_id: dict[str, Entity] = {}
        for e in entities:
            if e.id in self._by_id:
                raise KbError(f"duplicate entity id {e.id!r}")
            self._by_id[e.id] = e

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[Entity]:
        return iter(self._by_id.values())

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._by_id

    def __getitem__(self, entity_id: str) -> Entity:
        return self._by_id[entity_id]

    def get(self, entity_id: str) -> Entity | None:
        return self._by_id.get(entity_id)

    def names(self) -> dict[str, str]:
        return {e.id: e.name for e in self}


def load_kb(path) -> KbStore:
    entities = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entities.append(Entity(
                    id=str(obj["id"]),
                    name=obj["name"],
                    description=obj.get("description") or "",
                    aliases=tuple(obj.get("aliases") or ()),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise KbError(f"{path}:{lineno}: cannot parse entity: {exc}") from exc
    return KbStore(entities)


def write_kb(path, kb: Iterable[Entity]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in kb:
            fh.write(json.dumps(e.to_json(), ensure_ascii=False) + "\n")


def surface_forms(entity: Entity) -> list[str]:
    forms = []
    for s in (entity.name, *entity.aliases):
        key = clean_text(s)
        if key and key not in forms:
            forms.append(key)
    return forms


class Gazetteer(dict):
    """Normalised surface form -> set of entity ids."""

    def lookup(self, text: str) -> set[str]:
        return set(self.get(clean_text(text), ()))


def build_gazetteer(kb: KbStore) -> Gazetteer:
    gaz = Gazetteer()
    for e in kb:
        for form in surface_forms(e):
            gaz.setdefault(form, set()).add(e.id)
    return gaz


@dataclass
class Bm25Index:
    postings: dict[str, list[tuple[str, int]]]
    doc_len: dict[str, int]
    k1: float = 1.2
    b: float = 0.75
    avg_len: float = field(init=False)

    def __post_init__(self) -> None:
        self.avg_len = sum(self.doc_len.values()) / len(self.doc_len) if self.doc_len else 0.0

    @property
    def n_docs(self) -> int:
        return len(self.doc_len)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        n = self.n_docs
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def term_score(self, tf: int, length: int, idf: float) -> float:
        norm = self.k1 * (1.0 - self.b + self.b * length / self.avg_len)
        return idf * tf * (self.k1 + 1.0) / (tf + norm)

    def scores(self, query: str) -> dict[str, float]:
        """Score every document containing at least one query term."""
        out: dict[str, float] = defaultdict(float)
        for term in tokenize(clean_text(query)):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc, tf in plist:
                out[doc] += self.term_score(tf, self.doc_len[doc], idf)
        return dict(out)

    def to_json(self) -> dict:
        return {
            "k1": self.k1,
            "b": self.b,
            "doc_len": self.doc_len,
            "postings": {t: [list(p) for p in plist] for t, plist in sorted(self.postings.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Bm25Index":
        postings = {t: [(d, int(tf)) for d, tf in plist] for t, plist in obj["postings"].items()}
        return cls(postings, {d: int(n) for d, n in obj["doc_len"].items()}, obj["k1"], obj["b"])


def build_bm25_index(kb: KbStore, k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    """Index each entity as the token bag of its name plus aliases."""
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_len = {}
    for e in kb:
        tokens = [tok for form in surface_forms(e) for tok in tokenize(form)]
        doc_len[e.id] = len(tokens)
        for term, tf in Counter(tokens).items():
            insort(postings.setdefault(term, []), (e.id, tf))
    return Bm25Index(postings, doc_len, k1, b)


def save_snapshot(path, gazetteer: Gazetteer, index: Bm25Index) -> None:
    snap = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "gazetteer": {k: sorted(v) for k, v in sorted(gazetteer.items())},
        "bm25": index.to_json(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(snap, fh, ensure_ascii=False, sort_keys=True)


def load_snapshot(path) -> tuple[Gazetteer, Bm25Index]:
    with open(path, encoding="utf-8") as fh:
        snap = json.load(fh)
    if snap.get("format") != SNAPSHOT_FORMAT:
        raise KbError(f"{path}: not an index snapshot")
    if snap.get("version") != SNAPSHOT_VERSION:
        raise KbError(f"{path}: unsupported snapshot version {snap.get('version')}")
    gaz = Gazetteer((k, set(v)) for k, v in snap["gazetteer"].items())
    return gaz, Bm25Index.from_json(snap["bm25"])
