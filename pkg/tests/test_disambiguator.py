import pytest
import torch
from hypothesis import given, settings, strategies as st

from tablelink.candidate_gen import Candidate, CandidateSet, candidates_for_tables
from tablelink.disambiguator import (
    THRESHOLD, PredictStats, TrainConfig, build_vocab, decide, init_model, predict, read_predictions,
    score_candidates, train, training_label, write_predictions,
)
from tablelink.eval_bench import SyntheticSpec, make_synthetic_corpus
from tablelink.kb_store import build_bm25_index, build_gazetteer
from tablelink.table_model import mention_iter

SMALL = dict(d=16, layers=1, heads=2, max_seq_len=24, batch_size=2)


@pytest.fixture(scope="module")
def corpus():
    tables, kb = make_synthetic_corpus(SyntheticSpec(n_tables=6, n_rows=2, n_cols=2, n_types=3, entities_per_type=4,
                                                     ambiguous_per_type=2, ambiguity=0.3, nil=0.2), seed=1)
    sets = candidates_for_tables(tables, build_gazetteer(kb), build_bm25_index(kb), k=5)
    return tables, kb, sets


def test_no_candidates_is_certain_nil():
    p = score_candidates(torch.ones(4), torch.zeros(0, 4), torch.randn(4))
    assert p.tolist() == [1.0]
    assert decide(p.tolist(), []) == (None, 1.0)


def test_two_way_tie():
    v = torch.tensor([1.0, 0.0])
    p = score_candidates(v, torch.stack([v, v]), None)
    assert p.tolist() == [0.5, 0.5]
    assert decide(p.tolist() + [0.0], ["a", "b"])[0] == "a"  # earliest wins


def test_known_probabilities():
    p = score_candidates(torch.tensor([1.0, 0.0]), torch.tensor([[1.0, 0.0], [0.0, 1.0]]), None)
    assert p.tolist() == pytest.approx([0.7311, 0.2689], abs=1e-4)
    with pytest.raises(ValueError):
        score_candidates(torch.ones(3), torch.ones(2, 4), None)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 8), st.floats(-5, 5))
def test_sums_to_one_and_shift_invariant(seed, n, shift):
    g = torch.Generator().manual_seed(seed)
    v = torch.randn(6, generator=g, dtype=torch.float64)
    cands = torch.randn(n, 6, generator=g, dtype=torch.float64)
    nil = torch.randn(6, generator=g, dtype=torch.float64)
    p = score_candidates(v, cands, nil)
    assert abs(p.sum().item() - 1) < 1e-6
    # adding the same vector to every row shifts each logit by the same constant
    u = v * (shift / v.dot(v).item())
    assert torch.allclose(score_candidates(v, cands + u, nil + u), p, atol=1e-12)


def test_threshold_mode():
    assert decide([0.6, 0.1, 0.3], ["a", "b"], THRESHOLD, 0.8) == ("a", pytest.approx(6 / 7))
    chosen, _ = decide([0.3, 0.3, 0.4], ["a", "b"], THRESHOLD, 0.8)
    assert chosen is None
    assert decide([1.0], [], THRESHOLD) == (None, 1.0)


def test_training_label():
    assert training_label("b", ["a", "b"]) == 1
    assert training_label("z", ["a", "b"]) == 2
    assert training_label(None, ["a"]) == 1


def test_zero_epochs_returns_initial_model(corpus):
    tables, kb, sets = corpus
    cfg = TrainConfig(epochs=0, **SMALL)
    model, curve = train(tables, kb, sets, cfg)
    fresh = init_model(cfg, build_vocab(tables, kb))
    assert curve == []
    a, b = model.state_tensors(), fresh.state_tensors()
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_training_reproducible(corpus):
    tables, kb, sets = corpus
    cfg = TrainConfig(epochs=2, **SMALL)
    m1, c1 = train(tables, kb, sets, cfg)
    m2, c2 = train(tables, kb, sets, cfg)
    assert c1 == c2
    s1, s2 = m1.state_tensors(), m2.state_tensors()
    assert all(torch.equal(s1[k], s2[k]) for k in s1)
    m3, _ = train(tables, kb, sets, TrainConfig(epochs=2, **{**SMALL, "lr": 0.01}))
    assert any(not torch.equal(s1[k], m3.state_tensors()[k]) for k in s1)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="nope")
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(nil_mode="maybe")


def test_unknown_candidate_entity(corpus):
    tables, kb, _ = corpus
    key = mention_iter(tables[0])[0].key
    with pytest.raises(KeyError):
        train(tables, kb, {key: CandidateSet(key, (Candidate("ghost", "bm25", 1.0),))}, TrainConfig(epochs=1, **SMALL))


def test_predict_covers_every_mention(corpus, tmp_path):
    tables, kb, sets = corpus
    model, _ = train(tables, kb, sets, TrainConfig(epochs=1, **SMALL))
    stats = PredictStats()
    preds = predict(tables, model, kb, sets, "TELL", stats=stats)
    keys = [m.key for t in tables for m in mention_iter(t)]
    assert sorted(p.mention for p in preds) == sorted(keys)
    for p in preds:
        assert abs(sum(p.candidate_probs) - 1) < 1e-5
        assert p.chosen is None or p.chosen in sets[p.mention].ids
    distinct = {e for cs in sets.values() for e in cs.ids}
    assert stats.entity_encodings == len(distinct)
    assert stats.entity_encodings + stats.cache_hits == sum(len(cs.ids) for cs in sets.values())
    write_predictions(tmp_path / "p.jsonl", preds)
    assert read_predictions(tmp_path / "p.jsonl") == {p.mention: p.chosen for p in preds}


def test_predict_without_candidates_is_nil(corpus):
    tables, kb, sets = corpus
    model, _ = train(tables, kb, sets, TrainConfig(epochs=1, **SMALL))
    for variant in ("SINGLE", "TELL", "MASK_ATT_META"):
        preds = predict(tables, model, kb, {}, variant)
        assert all(p.chosen is None and p.probability == 1.0 for p in preds)


def test_predict_is_order_stable(corpus):
    tables, kb, sets = corpus
    model, _ = train(tables, kb, sets, TrainConfig(epochs=1, **SMALL))
    a = {p.mention: p.chosen for p in predict(tables, model, kb, sets, "TELL", chunk=1)}
    b = {p.mention: p.chosen for p in predict(tables[::-1], model, kb, sets, "TELL", chunk=4)}
    assert a == b
