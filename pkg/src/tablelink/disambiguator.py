"""Candidate scoring with a NIL class, end-to-end training and prediction."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import torch
from torch import Tensor

from .candidate_gen import CandidateSet, MentionKey
from .encoders import Variant, encode_entities, encode_tables
from .kb_store import KbStore
from .nn_core import AdamConfig, EncoderModel, ModelConfig, Vocab, make_optimizer
from .table_model import Table, mention_iter

log = logging.getLogger(__name__)

LEARNED = "learned"
THRESHOLD = "threshold"


@dataclass
class TrainConfig:
    variant: str = Variant.TELL.name
    lr: float = 3e-3
    epochs: int = 30
    batch_size: int = 4  # tables per step
    seed: int = 0
    k: int = 20
    max_seq_len: int = 64
    max_table_tokens: int = 512
    d: int = 64
    layers: int = 2
    heads: int = 4
    dtype: str = "float32"
    all_headers: bool = False
    nil_mode: str = LEARNED
    nil_threshold: float = 0.5

    def __post_init__(self) -> None:
        Variant.parse(self.variant)
        for name in ("lr", "batch_size", "k", "max_seq_len", "d", "layers", "heads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.nil_mode not in (LEARNED, THRESHOLD):
            raise ValueError(f"nil_mode must be {LEARNED!r} or {THRESHOLD!r}")


@dataclass
class Prediction:
    mention: MentionKey
    chosen: str | None
    probability: float
    candidate_probs: list[float] = field(default_factory=list)  # over candidates then NIL

    def to_json(self) -> dict:
        table_id, row, col = self.mention
        return {"table_id": table_id, "row": row, "col": col, "entity_id": self.chosen, "prob": self.probability}


def score_candidates(mention_vec: Tensor, candidates: Tensor, nil_vec: Tensor | None) -> Tensor:
    """Softmax over dot products with each candidate and, last, the NIL vector.

    ``nil_vec=None`` drops the NIL entry (a -inf NIL logit).
    """
    if candidates.dim() != 2:
        candidates = candidates.reshape(-1, mention_vec.shape[-1])
    if candidates.shape[-1] != mention_vec.shape[-1]:
        raise ValueError(f"candidate width {candidates.shape[-1]} != mention width {mention_vec.shape[-1]}")
    rows = candidates if nil_vec is None else torch.cat([candidates, nil_vec.reshape(1, -1)])
    if nil_vec is not None and nil_vec.shape[-1] != mention_vec.shape[-1]:
        raise ValueError("NIL vector width mismatch")
    if rows.shape[0] == 0:
        raise ValueError("nothing to score")
    return torch.softmax(rows @ mention_vec, dim=-1)


def decide(probs: Sequence[float], candidate_ids: Sequence[str], nil_mode: str = LEARNED,
           threshold: float = 0.5) -> tuple[str | None, float]:
    """Highest-probability entry, earliest on ties; the last slot is NIL.

    In threshold mode the NIL slot is ignored and the best candidate is
    kept only if its renormalised probability reaches ``threshold``.
    """
    n = len(candidate_ids)
    if nil_mode == THRESHOLD:
        if n == 0:
            return None, 1.0
        mass = sum(probs[:n])
        best = max(range(n), key=lambda i: (probs[i], -i))
        p = probs[best] / mass if mass > 0 else 0.0
        return (candidate_ids[best], p) if p >= threshold else (None, 1.0 - p)
    best = max(range(n + 1), key=lambda i: (probs[i], -i))
    return (candidate_ids[best] if best < n else None), float(probs[best])


def build_vocab(tables: Sequence[Table], kb: KbStore) -> Vocab:
    texts = []
    for t in tables:
        texts += [t.caption, t.page_title, *t.headers, *(v for row in t.cells for v in row)]
    for e in kb:
        texts += [e.name, e.description, *e.aliases]
    return Vocab.build(texts)


def init_model(config: TrainConfig, vocab: Vocab) -> EncoderModel:
    mc = ModelConfig(
        vocab_size=len(vocab), d=config.d, layers=config.layers, heads=config.heads,
        max_seq_len=config.max_seq_len, max_table_tokens=config.max_table_tokens,
        seed=config.seed, dtype=config.dtype,
    )
    return EncoderModel(mc, vocab)


def training_label(gold: str | None, candidate_ids: Sequence[str]) -> int:
    """Index of the gold entity in the candidate list, or the NIL slot."""
    if gold is not None and gold in candidate_ids:
        return candidate_ids.index(gold)
    return len(candidate_ids)


def _batch_loss(model: EncoderModel, tables: Sequence[Table], kb: KbStore,
                candidate_sets: Mapping[MentionKey, CandidateSet], config: TrainConfig) -> tuple[Tensor, int, int]:
    keys, vecs = encode_tables(tables, model, Variant.parse(config.variant), config.all_headers)
    if not keys:
        return vecs.sum(), 0, 0
    gold = {m.key: t.gold(m.row, m.col) for t in tables for m in mention_iter(t)}
    cand_lists = [_cand_ids(candidate_sets, key, config.k) for key in keys]
    uniq = sorted({e for ids in cand_lists for e in ids})
    slot = {e: i for i, e in enumerate(uniq)}
    ent = encode_entities([kb[e] for e in uniq], model)
    width = max(len(ids) for ids in cand_lists)
    n = len(keys)
    index = torch.zeros((n, width), dtype=torch.long)
    present = torch.zeros((n, width), dtype=torch.bool)
    labels = torch.empty(n, dtype=torch.long)
    for r, ids in enumerate(cand_lists):
        index[r, : len(ids)] = torch.tensor([slot[e] for e in ids], dtype=torch.long)
        present[r, : len(ids)] = True
        lab = training_label(gold[keys[r]], ids)
        labels[r] = width if lab == len(ids) else lab
    if width:
        cand_logits = torch.einsum("nd,nkd->nk", vecs, ent[index]).masked_fill(~present, float("-inf"))
    else:
        cand_logits = vecs.new_zeros((n, 0))
    logits = torch.cat([cand_logits, (vecs @ model.nil).unsqueeze(-1)], dim=-1)
    loss = torch.nn.functional.cross_entropy(logits, labels)
    correct = int((logits.argmax(dim=-1) == labels).sum())
    return loss, correct, n


def _cand_ids(candidate_sets: Mapping[MentionKey, CandidateSet], key: MentionKey, k: int) -> list[str]:
    cs = candidate_sets.get(key)
    return cs.ids[:k] if cs is not None else []


def train(tables: Sequence[Table], kb: KbStore, candidate_sets: Mapping[MentionKey, CandidateSet],
          config: TrainConfig, vocab: Vocab | None = None) -> tuple[EncoderModel, list[dict]]:
    """Minimise mean cross-entropy of the gold slot over candidates plus NIL.

    Returns the model and a per-epoch curve of mean loss and training accuracy.
    """
    if not tables:
        raise ValueError("empty training corpus")
    for e in {e for cs in candidate_sets.values() for e in cs.ids}:
        if e not in kb:
            raise KeyError(f"candidate entity {e!r} is not in the KB")
    torch.manual_seed(config.seed)
    vocab = vocab or build_vocab(tables, kb)
    model = init_model(config, vocab)
    opt = make_optimizer(model, AdamConfig(lr=config.lr))
    rng = random.Random(config.seed)
    order = list(range(len(tables)))
    curve = []
    for epoch in range(config.epochs):
        rng.shuffle(order)
        total_loss = 0.0
        correct = count = 0
        model.train()
        for start in range(0, len(order), config.batch_size):
            batch = [tables[i] for i in order[start:start + config.batch_size]]
            loss, c, n = _batch_loss(model, batch, kb, candidate_sets, config)
            if n == 0:
                continue
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += loss.item() * n
            correct += c
            count += n
        curve.append({"epoch": epoch, "loss": total_loss / max(count, 1), "train_acc": correct / max(count, 1)})
        log.info("epoch %d loss %.4f acc %.3f", epoch, curve[-1]["loss"], curve[-1]["train_acc"])
    model.eval()
    return model, curve


@dataclass
class PredictStats:
    entity_encodings: int = 0
    cache_hits: int = 0


def predict(tables: Sequence[Table], model: EncoderModel, kb: KbStore,
            candidate_sets: Mapping[MentionKey, CandidateSet], variant: str | Variant,
            k: int | None = None, nil_mode: str = LEARNED, nil_threshold: float = 0.5,
            all_headers: bool = False, stats: PredictStats | None = None, chunk: int = 16) -> list[Prediction]:
    """One prediction per mention; mentions without a candidate entry are NIL."""
    variant = Variant.parse(variant)
    stats = stats if stats is not None else PredictStats()
    cache: dict[str, Tensor] = {}
    preds = []
    with torch.no_grad():
        keys, vecs = [], []
        for start in range(0, len(tables), chunk):
            kt, vt = encode_tables(tables[start:start + chunk], model, variant, all_headers)
            keys += kt
            vecs += list(vt)
        # entity embeddings are computed once per id in a pre-pass
        wanted = []
        for key in keys:
            for e in _cand_ids(candidate_sets, key, k or 10**9):
                if e in cache:
                    stats.cache_hits += 1
                else:
                    wanted.append(e)
                    cache[e] = None
        if wanted:
            for e, v in zip(wanted, encode_entities([kb[e] for e in wanted], model)):
                cache[e] = v
            stats.entity_encodings += len(wanted)
        for key, vec in zip(keys, vecs):
            ids = _cand_ids(candidate_sets, key, k or 10**9)
            cands = torch.stack([cache[e] for e in ids]) if ids else vec.new_zeros((0, model.d))
            probs = score_candidates(vec, cands, model.nil).tolist()
            chosen, p = decide(probs, ids, nil_mode, nil_threshold)
            preds.append(Prediction(key, chosen, p, probs))
    return preds


def write_predictions(path, predictions: Sequence[Prediction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")


def read_predictions(path) -> dict[MentionKey, str | None]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[(str(obj["table_id"]), int(obj["row"]), int(obj["col"]))] = obj["entity_id"]
    return out


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
