from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import precision_recall_fscore_support

from oracles import bleu4_ref, hits, meteor_ref, rr
from praline.metrics import bleu4, domain_prf, hits_at_k, meteor_simplified, precision_at_1, reciprocal_rank


def test_ranking_hand_cases():
    ranked = ["a", "b", "c", "d", "e", "f"]
    assert reciprocal_rank(ranked, {"c"}) == pytest.approx(1 / 3)
    assert reciprocal_rank(ranked, {"z"}) == 0.0
    assert hits_at_k(ranked, {"f"}, 5) == 0 and hits_at_k(ranked, {"e"}, 5) == 1
    assert precision_at_1(ranked, {"a", "z"}) == 1
    assert precision_at_1([], {"a"}) == 0
    with pytest.raises(ValueError):
        hits_at_k(ranked, {"a"}, 0)


def test_domain_prf_degenerate():
    # everything predicted as class 0 on a balanced two-class set
    prf = domain_prf([0, 0, 0, 0], [0, 0, 1, 1], labels=[0, 1])
    assert prf["precision"] == pytest.approx(0.25)
    assert prf["recall"] == pytest.approx(0.5)
    assert prf["f1"] == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        domain_prf([0], [0, 1])


def test_bleu_hand_value():
    # 4/4 clipped unigram, smoothed higher orders all 1, brevity penalty exp(1 - 5/4)
    assert bleu4("a b c d".split(), "a b c d e".split()) == pytest.approx(math.exp(-0.25), abs=1e-12)
    assert bleu4(["x"], ["y"]) == 0.0
    assert bleu4([], ["y"]) == 0.0


def test_meteor_hand_values():
    seq = "a b c d e".split()
    assert meteor_simplified(seq, seq) == pytest.approx(1 - 0.5 * (1 / 5) ** 3)
    # "d e a b c" vs "a b c d e": 2 chunks
    assert meteor_simplified("d e a b c".split(), seq) == pytest.approx(1 - 0.5 * (2 / 5) ** 3)
    assert meteor_simplified(["q"], seq) == 0.0


tokens = st.lists(st.sampled_from("abcd"), min_size=0, max_size=7)


@settings(max_examples=200, deadline=None)
@given(tokens, tokens)
def test_generation_metrics_match_reference(cand, ref):
    assert abs(bleu4(cand, ref) - bleu4_ref(cand, ref)) <= 1e-9
    assert abs(meteor_simplified(cand, ref) - meteor_ref(cand, ref)) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.permutations(list(range(12))), st.sets(st.integers(0, 14), max_size=3))
def test_ranking_metrics_match_reference(ranked, gold):
    assert reciprocal_rank(ranked, gold) == rr(ranked, gold)
    for k in (1, 5, 10):
        assert hits_at_k(ranked, gold, k) == hits(ranked, gold, k)
    assert precision_at_1(ranked, gold) == hits(ranked, gold, 1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=30))
def test_domain_prf_matches_sklearn(pairs):
    pred = [p for p, _ in pairs]
    gold = [g for _, g in pairs]
    labels = [0, 1, 2, 3]
    ours = domain_prf(pred, gold, labels)
    p, r, f, _ = precision_recall_fscore_support(gold, pred, labels=labels, average="macro", zero_division=0)
    assert ours["precision"] == pytest.approx(p, abs=1e-12)
    assert ours["recall"] == pytest.approx(r, abs=1e-12)
    assert ours["f1"] == pytest.approx(f, abs=1e-12)
