from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from praline.corpus import (
    SPECIAL_TOKENS,
    ConfigError,
    Conversation,
    SchemaError,
    Tokenizer,
    TrainingInstance,
    Turn,
    assemble_input,
    build_input_sequence,
    build_target,
    load_conversations,
    make_batches,
    mark_answer,
    split_conversations,
)
from praline.kg import ContextPath


def _conv():
    return Conversation("c1", "movies", [
        Turn("who directed the film heat ?", ["Q2"], ["michael mann"], "the director of heat is michael mann .", ["Q1"]),
        Turn("and when was he born ?", ['"1943"'], ["1943"], "he was born in 1943 .", ["Q2"]),
    ])


def test_tokenizer_roundtrip(tmp_path):
    tok = Tokenizer.build(["Hello world !", "hello again"])
    assert tok.itos[: len(SPECIAL_TOKENS)] == list(SPECIAL_TOKENS)
    assert tok.pad_id == 0
    ids = tok.encode("hello [SEP] world")
    assert tok.decode(ids) == "hello [SEP] world"
    assert tok.encode("unseen")[0] == tok.unk_id
    tok.save(tmp_path / "v.json")
    assert Tokenizer.load(tmp_path / "v.json").itos == tok.itos


def test_assemble_input_layout_and_modes():
    tok = Tokenizer.build(["a b c d e f"])
    hist = [("a", "b"), ("c", "d")]
    full = tok.decode(assemble_input(hist, "e", tok))
    assert full == "a [SEP] b [SEP] c [SEP] d [SEP] e"
    assert tok.decode(assemble_input(hist, "e", tok, "previous_turn_only")) == "c [SEP] d [SEP] e"
    assert tok.decode(assemble_input(hist, "e", tok, "none")) == "e"
    with pytest.raises(ConfigError):
        assemble_input(hist, "e", tok, "everything")


def test_left_truncation_keeps_question():
    tok = Tokenizer.build(["x q"])
    hist = [("x " * 100, "x " * 100)]
    ids = assemble_input(hist, "q", tok, max_len=150)
    assert len(ids) == 150 and tok.itos[ids[-1]] == "q"


def test_build_input_sequence_uses_gold_history():
    c = _conv()
    tok = Tokenizer.build(["who directed the film heat ? the director of heat is michael mann . and when was he born ?"])
    text = tok.decode(build_input_sequence(c, 1, tok))
    assert "michael mann" in text and text.endswith("born ?")
    bare = tok.decode(build_input_sequence(c, 1, tok, response_mode="bare_answer"))
    assert "director" not in bare.split("[SEP]")[1]
    with pytest.raises(IndexError):
        build_input_sequence(c, 5, tok)


def test_mark_answer_and_target():
    text, ok = mark_answer("the director of heat is michael mann .", ["michael mann"])
    assert ok and "[ANS]" in text and "michael" not in text
    _, ok = mark_answer("no answer here", ["zzz"])
    assert not ok
    tok = Tokenizer.build(["the director of heat is"])
    ids, _ = build_target("the director of heat is michael mann .", ["michael mann"], tok)
    assert ids[-1] == tok.eos_id and tok.ans_id in ids
    long_ids, _ = build_target("the " * 80, [], tok)
    assert len(long_ids) == 50


def test_schema_errors(tmp_path):
    bad = tmp_path / "c.jsonl"
    bad.write_text(json.dumps({"id": "x", "domain": "m", "turns": [{"question": "q"}]}) + "\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="line 1"):
        load_conversations(bad)
    bad.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="invalid JSON"):
        load_conversations(bad)


def test_split_is_deterministic_and_disjoint():
    convs = [Conversation(f"c{i}", "m", []) for i in range(20)]
    a = split_conversations(convs, seed=3)
    b = split_conversations(convs, seed=3)
    assert [[c.id for c in s] for s in a] == [[c.id for c in s] for s in b]
    ids = [c.id for s in a for c in s]
    assert sorted(ids) == sorted(c.id for c in convs) and [len(s) for s in a] == [14, 3, 3]


def _inst(npos, nneg):
    p = [ContextPath("A", (("r", f"P{i}"),)) for i in range(npos)]
    n = [ContextPath("A", (("r", f"N{i}"),)) for i in range(nneg)]
    return TrainingInstance([5], [2], 0, p, n)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40), st.integers(0, 99))
def test_batches_balanced_and_reproducible(shape, seed):
    insts = [_inst(p, n) for p, n in shape]
    b1 = make_batches(insts, 8, seed, 1)
    b2 = make_batches(insts, 8, seed, 1)
    assert [b.rk_labels for b in b1] == [b.rk_labels for b in b2]
    assert sum(len(b) for b in b1) == len(insts)
    for b in b1:
        for inst, lab, path, skip in zip(b.instances, b.rk_labels, b.sampled_paths, b.no_rank):
            if not inst.rankable:
                assert lab == 0 and path is None and skip
            elif lab == 1:
                assert path in inst.positives
            else:
                assert lab == -1 and path in inst.negatives
        free = [inst.positives and inst.negatives for inst in b.instances]
        if all(free):
            assert sum(1 for lab in b.rk_labels if lab == 1) == len(b) // 2


def test_odd_batch_rejected():
    with pytest.raises(ConfigError):
        make_batches([_inst(1, 1)], 3, 0)
