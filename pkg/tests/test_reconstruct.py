import logging
from functools import lru_cache

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from viseme_decode.errors import ConfigError, ParseError, ValidationError
from viseme_decode.reconstruct import (CatalogEntry, SentenceCatalog, SequenceConfig, VisemeSequence,
                                       assemble_sequence, corrupt, edit_distance, infer_sentence,
                                       load_sequence_model, match_closed_set, save_sequence_model,
                                       train_sequence_model)


def brute_edit(a, b):
    """Plain recursion over the three edit choices."""
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(d(i + 1, j) + 1, d(i, j + 1) + 1, d(i + 1, j + 1) + (a[i] != b[j]))
    return d(0, 0)


def catalog(seqs):
    return SentenceCatalog([CatalogEntry(i, f"sentence {i}", VisemeSequence(tuple(s), i))
                            for i, s in enumerate(seqs)])


def random_catalog(n, seed=0, lo=20, hi=40):
    rng = np.random.default_rng(seed)
    return catalog([rng.integers(0, 15, rng.integers(lo, hi + 1)).tolist() for _ in range(n)])


def test_assemble_sequence():
    assert assemble_sequence([0, 1, 12, 0]).labels == (0, 1, 12, 0)
    assert assemble_sequence([5, 6, 7], interval_index=[2, 0, 1], sentence_id=4) == VisemeSequence((6, 7, 5), 4)
    with pytest.raises(ValidationError):
        assemble_sequence([0, 15])
    with pytest.raises(ValidationError):
        assemble_sequence([1, 2], interval_index=[0, 0])
    with pytest.raises(ValidationError):
        assemble_sequence([1, 2], interval_index=[0])


def test_edit_distance_examples():
    assert edit_distance([1, 2, 3], [1, 4, 3]) == 1 == brute_edit((1, 2, 3), (1, 4, 3))
    assert edit_distance([3, 1, 4], []) == 3 and edit_distance([], [2]) == 1
    assert edit_distance([], []) == 0


SHORT = st.lists(st.integers(0, 3), max_size=6)


@settings(max_examples=500, deadline=None)
@given(SHORT, SHORT, SHORT)
def test_edit_distance_is_a_metric_matching_oracle(a, b, c):
    d_ab = edit_distance(a, b)
    assert d_ab == brute_edit(tuple(a), tuple(b))
    assert d_ab == edit_distance(b, a)
    assert (d_ab == 0) == (a == b)
    assert edit_distance(a, c) <= d_ab + edit_distance(b, c)


def test_match_self_and_single_substitution():
    cat = random_catalog(50, seed=1)
    for e in cat:
        res = match_closed_set(e.sequence, cat)
        assert (res.sentence_id, res.distance) == (e.id, 0) and res.margin > 0
    rng = np.random.default_rng(2)
    target = cat.get(7).sequence.labels
    others = min(edit_distance(target, e.sequence) for e in cat if e.id != 7)
    assert others >= 3
    s = list(target)
    k = int(rng.integers(len(s)))
    s[k] = (s[k] + 1) % 15
    res = match_closed_set(s, cat)
    assert (res.sentence_id, res.distance) == (7, 1)


def test_match_tie_rule_and_errors():
    cat = catalog([[1, 2, 3], [4, 5], [1, 2, 3]])
    res = match_closed_set([1, 2, 3], cat)
    assert (res.sentence_id, res.distance, res.margin, res.tied) == (0, 0, 0, (2,))
    assert cat.duplicates() == [[0, 2]]
    with pytest.raises(ValidationError):
        match_closed_set([], cat)
    with pytest.raises(ValidationError):
        match_closed_set([1], SentenceCatalog([]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 14), min_size=1, max_size=40), st.integers(0, 10_000))
def test_corrupt_always_changes_hit_positions(seq, seed):
    out = corrupt(seq, 1.0 - 1e-12, np.random.default_rng(seed))
    assert len(out) == len(seq)
    assert all(a != b and 0 <= b < 15 for a, b in zip(seq, out))
    assert corrupt(seq, 0.0, np.random.default_rng(seed)) == tuple(seq)


def test_corrupt_rate_is_respected():
    seq = [3] * 20000
    out = np.array(corrupt(seq, 0.3, np.random.default_rng(0)))
    assert abs(np.mean(out != 3) - 0.3) < 0.015


def test_catalog_io(tmp_path):
    cat = random_catalog(5)
    cat.save(tmp_path / "c.json")
    back = SentenceCatalog.load(tmp_path / "c.json")
    assert back.to_records() == cat.to_records()
    assert back.subset([1, 3]).ids == [1, 3]
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ParseError):
        SentenceCatalog.load(tmp_path / "bad.json")
    (tmp_path / "obj.json").write_text("{}")
    with pytest.raises(ParseError):
        SentenceCatalog.load(tmp_path / "obj.json")
    with pytest.raises(ValidationError):
        SentenceCatalog.from_records([{"id": 1}])
    with pytest.raises(ValidationError):
        SentenceCatalog.from_records([{"id": 1, "viseme_sequence": [1]}, {"id": 1, "viseme_sequence": [2]}])


FAST = SequenceConfig(hidden=32, embed=8, epochs=20, copies=20, batch_size=32)


def test_sequence_model_learns_small_catalog(tmp_path):
    cat = random_catalog(10, seed=3)
    model = train_sequence_model(cat, FAST)
    for e in cat:
        sid, post = infer_sentence(model, e.sequence)
        assert sid == e.id == match_closed_set(e.sequence, cat).sentence_id
        assert abs(post.sum() - 1) < 1e-6 and post.shape == (10,)
    save_sequence_model(model, FAST, tmp_path / "m" / "seq.pt")
    back = load_sequence_model(tmp_path / "m" / "seq.pt")
    for a, b in zip(model.state_dict().values(), back.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(ValidationError):
        infer_sentence(model, [])


def test_sequence_model_determinism_and_errors(caplog):
    cat = random_catalog(4, seed=4, lo=5, hi=8)
    cfg = SequenceConfig(hidden=8, embed=4, epochs=2, copies=1)
    a, b = train_sequence_model(cat, cfg), train_sequence_model(cat, cfg)
    for x, y in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(x, y)
    with pytest.raises(ValidationError):
        train_sequence_model(SentenceCatalog([]), cfg)
    with caplog.at_level(logging.WARNING):
        train_sequence_model(catalog([[1, 2], [1, 2], [3]]), cfg)
    assert "share a viseme sequence" in caplog.text
    with pytest.raises(ConfigError):
        SequenceConfig(corruption=1.0)
    with pytest.raises(ConfigError):
        SequenceConfig.from_dict({"layers": 2})
