"""Entity and mention encoders for every ablation variant.

Per-cell variants (SINGLE, TELL, LINEAR_META, LSTM_META) build one short
sequence per mention.  Table-level variants (ALL_ATT, ALL_ATT_META,
MASK_ATT_META) linearise the whole table and pool each mention's own
token positions out of the shared encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import torch
from torch import Tensor

from .kb_store import Entity
from .nn_core import PAD_ID, SEP_ID, UNK_ID, EncoderModel, Segment, Vocab, lstm_encode, masked_mean
from .table_model import Mention, StructuralContext, Table, mention_iter, structural_context


class Variant(str, Enum):
    SINGLE = "SingleAttEnc (baseline)"
    TELL = "SingleAttEnc + meta (TELL)"
    ALL_ATT = "AllAttEnc"
    ALL_ATT_META = "AllAttEnc + meta"
    MASK_ATT_META = "MaskAttEnc + meta (TURL)"
    LINEAR_META = "SingleLinearEnc + meta"
    LSTM_META = "SingleLSTMEnc + meta"

    @classmethod
    def parse(cls, text: "str | Variant") -> "Variant":
        if isinstance(text, Variant):
            return text
        norm = text.strip().lower()
        for v in cls:
            if norm in (v.name.lower(), v.value.lower()):
                return v
        raise ValueError(f"unknown variant {text!r}; choose from {[v.name for v in cls]}")

    @property
    def per_cell(self) -> bool:
        return self in (Variant.SINGLE, Variant.TELL, Variant.LINEAR_META, Variant.LSTM_META)

    @property
    def uses_meta(self) -> bool:
        return self not in (Variant.SINGLE, Variant.ALL_ATT)


class TableTooLarge(ValueError):
    pass


@dataclass
class TokenSeq:
    ids: list[int]
    segs: list[int]
    pool: list[int]  # positions averaged into the output vector

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.segs):
            raise ValueError("ids and segment tags differ in length")

    def __len__(self) -> int:
        return len(self.ids)


# token sources of a linearised table
CELL, HEADER, CAPTION, TITLE = "cell", "header", "caption", "title"


@dataclass
class TokenLayout:
    kinds: list[str] = field(default_factory=list)
    rows: list[int] = field(default_factory=list)
    cols: list[int] = field(default_factory=list)

    def add(self, kind: str, n: int, row: int = -1, col: int = -1) -> None:
        self.kinds += [kind] * n
        self.rows += [row] * n
        self.cols += [col] * n

    def __len__(self) -> int:
        return len(self.kinds)


def _tokens(vocab: Vocab, text: str) -> list[int]:
    return vocab.encode(text)


def cell_sequence(value: str, context: StructuralContext | None, vocab: Vocab, max_len: int,
                  with_meta: bool, all_headers: Sequence[str] | None = None) -> TokenSeq:
    """cell [SEP header SEP caption SEP title], truncating title, caption, header in that order."""
    cell = _tokens(vocab, value)[:max_len] or [UNK_ID]
    if not with_meta:
        return TokenSeq(cell, [Segment.CELL] * len(cell), list(range(len(cell))))
    headers = " ".join(all_headers) if all_headers is not None else context.header
    parts = [
        (_tokens(vocab, headers), Segment.HEADER),
        (_tokens(vocab, context.caption), Segment.CAPTION),
        (_tokens(vocab, context.page_title), Segment.TITLE),
    ]
    budget = max_len - len(cell)
    # each part costs its separator plus its tokens
    need = [1 + len(toks) for toks, _ in parts]
    for idx in (2, 1, 0):
        over = sum(need) - budget
        if over <= 0:
            break
        cut = min(over, need[idx])
        need[idx] -= cut
    ids, segs = list(cell), [Segment.CELL] * len(cell)
    for (toks, seg), n in zip(parts, need):
        if n <= 0:
            continue
        ids.append(SEP_ID)
        segs.append(Segment.SEP)
        ids += toks[: n - 1]
        segs += [seg] * (n - 1)
    return TokenSeq(ids, [int(s) for s in segs], list(range(len(cell))))


def linearize_table(table: Table, vocab: Vocab, with_meta: bool) -> tuple[TokenSeq, TokenLayout, dict]:
    """Caption, page title, headers left to right, then non-empty cells row-major.

    Returns the token sequence, the per-position layout and a map from
    (row, col) to that cell's token positions.
    """
    ids: list[int] = []
    segs: list[int] = []
    layout = TokenLayout()

    def put(toks: list[int], seg: Segment, kind: str, row: int = -1, col: int = -1) -> list[int]:
        start = len(ids)
        ids.extend(toks)
        segs.extend([int(seg)] * len(toks))
        layout.add(kind, len(toks), row, col)
        return list(range(start, len(ids)))

    if with_meta:
        put(_tokens(vocab, table.caption), Segment.CAPTION, CAPTION)
        put(_tokens(vocab, table.page_title), Segment.TITLE, TITLE)
        for j, h in enumerate(table.headers):
            put(_tokens(vocab, h), Segment.HEADER, HEADER, col=j)
    positions = {}
    for m in mention_iter(table):
        positions[(m.row, m.col)] = put(_tokens(vocab, m.value) or [UNK_ID], Segment.CELL, CELL, m.row, m.col)
    return TokenSeq(ids, segs, []), layout, positions


def build_structural_mask(table: Table, layout: TokenLayout, all_headers: bool = False) -> Tensor:
    """Visibility of a linearised table.

    A cell token sees tokens of cells in its own row or column (itself
    included), its column's header (every header with ``all_headers``),
    the caption and the page title.  Metadata tokens see every position.
    Positions whose kind is ``None`` are padding and see nothing.
    """
    n = len(layout)
    for kind, i, j in zip(layout.kinds, layout.rows, layout.cols):
        if kind == CELL and not (0 <= i < table.n_rows and 0 <= j < table.n_cols and table.cells[i][j] != ""):
            raise ValueError(f"layout references cell ({i}, {j}) not present in table {table.id!r}")
        if kind == HEADER and not 0 <= j < table.n_cols:
            raise ValueError(f"layout references header {j} outside table {table.id!r}")
        if kind not in (CELL, HEADER, CAPTION, TITLE, None):
            raise ValueError(f"unknown token source {kind!r}")
    kinds = layout.kinds
    rows = torch.tensor(layout.rows, dtype=torch.long)
    cols = torch.tensor(layout.cols, dtype=torch.long)
    is_cell = torch.tensor([k == CELL for k in kinds], dtype=torch.bool)
    is_header = torch.tensor([k == HEADER for k in kinds], dtype=torch.bool)
    is_ctx = torch.tensor([k in (CAPTION, TITLE) for k in kinds], dtype=torch.bool)
    real = torch.tensor([k is not None for k in kinds], dtype=torch.bool)

    q_cell = is_cell.view(n, 1)
    same_line = (rows.view(n, 1) == rows.view(1, n)) | (cols.view(n, 1) == cols.view(1, n))
    cell_cell = q_cell & is_cell.view(1, n) & same_line
    header_ok = is_header.view(1, n) if all_headers else is_header.view(1, n) & (cols.view(n, 1) == cols.view(1, n))
    cell_meta = q_cell & (header_ok | is_ctx.view(1, n))
    meta_all = (real & ~is_cell).view(n, 1) & real.view(1, n)
    return cell_cell | cell_meta | meta_all


def _pad(seqs: Sequence[TokenSeq]) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    length = max(len(s) for s in seqs)
    b = len(seqs)
    ids = torch.full((b, length), PAD_ID, dtype=torch.long)
    segs = torch.full((b, length), int(Segment.SEP), dtype=torch.long)
    valid = torch.zeros((b, length), dtype=torch.bool)
    pool = torch.zeros((b, length))
    for r, s in enumerate(seqs):
        n = len(s)
        ids[r, :n] = torch.tensor(s.ids, dtype=torch.long)
        segs[r, :n] = torch.tensor(s.segs, dtype=torch.long)
        valid[r, :n] = True
        pool[r, s.pool] = 1.0
    return ids, segs, valid, pool


def _full_mask(valid: Tensor) -> Tensor:
    return valid.unsqueeze(-1) & valid.unsqueeze(-2)


def encode_sequences(model: EncoderModel, seqs: Sequence[TokenSeq], kind: str = "transformer") -> Tensor:
    """Encode a batch of independent sequences to [B, d].

    kind: ``transformer`` (mean of pooled positions after attention),
    ``linear`` (mean embedding through one linear layer) or ``lstm``
    (final hidden state).
    """
    ids, segs, valid, pool = _pad(seqs)
    x = model.embed(ids, segs)
    if kind == "transformer":
        h = model.transformer(x, _full_mask(valid))
        return masked_mean(h, pool.to(h.dtype))
    if kind == "linear":
        return masked_mean(x, valid.to(x.dtype)) @ model.lin_w + model.lin_b
    if kind == "lstm":
        return lstm_encode(x, model.lstm, valid.sum(dim=-1))
    raise ValueError(f"unknown sequence encoder {kind!r}")


def _kind(variant: Variant) -> str:
    return {Variant.LINEAR_META: "linear", Variant.LSTM_META: "lstm"}.get(variant, "transformer")


def combine_entity(name_vec: Tensor, desc_vec: Tensor | None) -> Tensor:
    return name_vec if desc_vec is None else name_vec + desc_vec


def entity_sequences(entity: Entity, vocab: Vocab, max_len: int) -> tuple[TokenSeq, TokenSeq | None]:
    if not entity.name.strip():
        raise ValueError(f"entity {entity.id!r} has an empty name")
    name = _tokens(vocab, entity.name)[:max_len] or [UNK_ID]
    desc = _tokens(vocab, entity.description)[:max_len]
    name_seq = TokenSeq(name, [int(Segment.NAME)] * len(name), list(range(len(name))))
    desc_seq = TokenSeq(desc, [int(Segment.DESC)] * len(desc), list(range(len(desc)))) if desc else None
    return name_seq, desc_seq


def encode_entities(entities: Sequence[Entity], model: EncoderModel) -> Tensor:
    """Mean encoded name plus mean encoded description, [n, d]."""
    if not entities:
        return torch.zeros((0, model.d), dtype=model.tok.dtype)
    pairs = [entity_sequences(e, model.vocab, model.config.max_seq_len) for e in entities]
    names = encode_sequences(model, [p[0] for p in pairs])
    with_desc = [i for i, p in enumerate(pairs) if p[1] is not None]
    if not with_desc:
        return names
    descs = encode_sequences(model, [pairs[i][1] for i in with_desc])
    desc_full = torch.zeros_like(names).index_copy(0, torch.tensor(with_desc), descs)
    return combine_entity(names, desc_full)


def encode_entity(entity: Entity, model: EncoderModel) -> Tensor:
    return encode_entities([entity], model)[0]


def mention_sequence(table: Table, mention: Mention, model: EncoderModel, variant: Variant,
                     all_headers: bool = False) -> TokenSeq:
    ctx = structural_context(table, mention.row, mention.col)
    return cell_sequence(mention.value, ctx, model.vocab, model.config.max_seq_len, variant.uses_meta,
                         table.headers if all_headers else None)


def table_encoding_inputs(table: Table, model: EncoderModel, variant: Variant,
                          all_headers: bool = False) -> tuple[TokenSeq, Tensor, dict]:
    seq, layout, positions = linearize_table(table, model.vocab, variant.uses_meta)
    if len(seq) > model.config.max_table_tokens:
        raise TableTooLarge(
            f"table {table.id!r} linearises to {len(seq)} tokens (budget {model.config.max_table_tokens})")
    if variant is Variant.MASK_ATT_META:
        mask = build_structural_mask(table, layout, all_headers)
    else:
        mask = torch.ones((len(seq), len(seq)), dtype=torch.bool)
    return seq, mask, positions


def encode_tables(tables: Sequence[Table], model: EncoderModel, variant: Variant,
                  all_headers: bool = False) -> tuple[list[tuple[str, int, int]], Tensor]:
    """Embeddings of every mention of ``tables``; keys are (table_id, row, col)."""
    variant = Variant.parse(variant)
    keys: list[tuple[str, int, int]] = []
    if variant.per_cell:
        seqs = []
        for t in tables:
            for m in mention_iter(t):
                keys.append(m.key)
                seqs.append(mention_sequence(t, m, model, variant, all_headers))
        if not seqs:
            return keys, torch.zeros((0, model.d), dtype=model.tok.dtype)
        return keys, encode_sequences(model, seqs, _kind(variant))

    inputs = [(t, *table_encoding_inputs(t, model, variant, all_headers)) for t in tables]
    inputs = [item for item in inputs if item[3]]
    if not inputs:
        return keys, torch.zeros((0, model.d), dtype=model.tok.dtype)
    ids, segs, valid, _ = _pad([item[1] for item in inputs])
    b, length = ids.shape
    mask = torch.zeros((b, length, length), dtype=torch.bool)
    for r, (_, seq, m, _) in enumerate(inputs):
        mask[r, : len(seq), : len(seq)] = m
    h = model.transformer(model.embed(ids, segs), mask)
    out = []
    for r, (t, _, _, positions) in enumerate(inputs):
        for (i, j), pos in positions.items():
            keys.append((t.id, i, j))
            out.append(h[r, pos].mean(dim=0))
    return keys, torch.stack(out)


def encode_mention(mention: Mention, context: StructuralContext, table: Table, model: EncoderModel,
                   variant: Variant, all_headers: bool = False) -> Tensor:
    variant = Variant.parse(variant)
    if variant.per_cell:
        seq = cell_sequence(mention.value, context, model.vocab, model.config.max_seq_len, variant.uses_meta,
                            table.headers if all_headers else None)
        return encode_sequences(model, [seq], _kind(variant))[0]
    keys, vecs = encode_tables([table], model, variant, all_headers)
    return vecs[keys.index(mention.key)]


def attention_pairs(table: Table, model: EncoderModel, variant: Variant, all_headers: bool = False) -> int:
    """Allowed (query, key) pairs: sum of per-cell L^2, or true mask entries for a table."""
    variant = Variant.parse(variant)
    if variant.per_cell:
        return sum(len(mention_sequence(table, m, model, variant, all_headers)) ** 2 for m in mention_iter(table))
    _, mask, _ = table_encoding_inputs(table, model, variant, all_headers)
    return int(mask.sum())


def iter_all_mentions(tables: Iterable[Table]) -> Iterable[tuple[Table, Mention]]:
    for t in tables:
        for m in mention_iter(t):
            yield t, m
