"""Entity linking for tables with per-cell and table-level encoders."""

from .candidate_gen import CandidateSet, generate_candidates, recall_at
from .encoders import Variant, build_structural_mask, encode_entity, encode_mention
from .kb_store import Entity, KbStore, build_bm25_index, build_gazetteer, load_kb
from .table_model import Mention, Table, mention_iter, structural_context

__all__ = [
    "CandidateSet",
    "Entity",
    "KbStore",
    "Mention",
    "Table",
    "Variant",
    "build_bm25_index",
    "build_gazetteer",
    "build_structural_mask",
    "encode_entity",
    "encode_mention",
    "generate_candidates",
    "load_kb",
    "mention_iter",
    "recall_at",
    "structural_context",
]
