from __future__ import annotations

import numpy as np
import pytest

from praline.embedder import EmbeddingCache, EmbeddingError, HashingEmbedder, TrigramEmbedder, make_embedder


@pytest.mark.parametrize("cls", [HashingEmbedder, TrigramEmbedder])
def test_deterministic_unit_vectors(cls):
    a = cls(32, seed=3).embed_text("pulp fiction directed by")
    b = cls(32, seed=3).embed_text("pulp fiction directed by")
    assert a.dtype == np.float64 and a.shape == (32,)
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    assert not np.array_equal(a, cls(32, seed=4).embed_text("pulp fiction directed by"))


def test_empty_input_rejected():
    e = HashingEmbedder(16)
    for text in ("", "   "):
        with pytest.raises(EmbeddingError, match="empty embedding input"):
            e.embed_text(text)


def test_similar_texts_are_closer():
    e = HashingEmbedder(64)
    a, b, c = e.embed_many(["film director of heat", "film director of ronin", "capital city of peru"])
    assert a @ b > a @ c


def test_cache_roundtrip_is_bit_identical(tmp_path):
    e1 = make_embedder("hashed-bag", 16, 1, tmp_path)
    fresh = e1.embed_many(["alpha beta", "gamma"])
    e1.cache.save()
    e2 = make_embedder("hashed-bag", 16, 1, tmp_path)
    assert len(e2.cache) == 2
    assert np.array_equal(e2.embed_many(["alpha beta", "gamma"]), fresh)
    raw = np.fromfile(tmp_path / EmbeddingCache.BLOB, dtype="<f4")
    assert raw.size == 32


def test_cache_invalidated_by_other_provider(tmp_path):
    e1 = make_embedder("hashed-bag", 16, 1, tmp_path)
    e1.embed_text("alpha")
    e1.cache.save()
    assert len(make_embedder("char-trigram-rp", 16, 1, tmp_path).cache) == 0
    assert len(make_embedder("hashed-bag", 16, 2, tmp_path).cache) == 0
    assert len(make_embedder("hashed-bag", 8, 1, tmp_path).cache) == 0


def test_unknown_method():
    with pytest.raises(EmbeddingError, match="unknown embedding method"):
        make_embedder("word2vec", 8)
