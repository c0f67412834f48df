"""Frozen text embeddings for verbalised paths and domain labels.

Providers are deterministic functions of ``(text, seed)``.  Vectors pass
through float32 before the final float64 normalisation so that cached and
freshly computed vectors are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path
from typing import Sequence

import numpy as np

from .text import split_tokens


class EmbeddingError(ValueError):
    pass


def _digest(seed: int, kind: str, key: str) -> bytes:
    return hashlib.blake2b(f"{seed}\x1f{kind}\x1f{key}".encode("utf-8"), digest_size=16).digest()


def _finish(raw: np.ndarray) -> np.ndarray:
    v32 = raw.astype(np.float32)
    v = v32.astype(np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise EmbeddingError("degenerate embedding input (features cancel out)")
    return v / norm


class EmbeddingProvider:
    """Base class; subclasses implement ``_raw`` returning an unnormalised vector."""

    method = "base"

    def __init__(self, dim: int, seed: int = 0, cache: "EmbeddingCache | None" = None) -> None:
        if dim < 1:
            raise EmbeddingError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)
        self._memo: dict[str, np.ndarray] = {}
        self.cache = cache
        if cache is not None:
            cache.bind(self)

    @property
    def tag(self) -> str:
        return f"{self.method}/d{self.dim}/s{self.seed}"

    def _raw(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed_text(self, text: str) -> np.ndarray:
        hit = self._memo.get(text)
        if hit is not None:
            return hit.copy()
        stored = self.cache.get(text) if self.cache is not None else None
        if stored is None:
            if not text or not text.strip() or not split_tokens(text):
                raise EmbeddingError("empty embedding input")
            stored = self._raw(text).astype(np.float32)
            if self.cache is not None:
                self.cache.put(text, stored)
        vec = _finish(stored)
        self._memo[text] = vec
        return vec.copy()

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, t in enumerate(texts):
            out[i] = self.embed_text(t)
        return out

    # the two named batch entry points differ only in intent
    def embed_paths(self, verbalized: Sequence[str]) -> np.ndarray:
        return self.embed_many(verbalized)

    def embed_domains(self, domain_labels: Sequence[str]) -> np.ndarray:
        return self.embed_many(domain_labels)


class HashingEmbedder(EmbeddingProvider):
    """Hashed bag of tokens: each token maps to ``slots`` signed coordinates."""

    method = "hashed-bag"

    def __init__(self, dim: int, seed: int = 0, slots: int = 8, cache: "EmbeddingCache | None" = None):
        self.slots = min(int(slots), int(dim))
        self._patterns: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        super().__init__(dim, seed, cache)

    @property
    def tag(self) -> str:
        return f"{self.method}/d{self.dim}/s{self.seed}/k{self.slots}"

    def _pattern(self, token: str) -> tuple[np.ndarray, np.ndarray]:
        pat = self._patterns.get(token)
        if pat is None:
            rng = np.random.default_rng(np.frombuffer(_digest(self.seed, "tok", token), dtype=np.uint32))
            idx = rng.choice(self.dim, size=self.slots, replace=False)
            signs = rng.choice(np.array([-1.0, 1.0]), size=self.slots)
            pat = (idx, signs)
            self._patterns[token] = pat
        return pat

    def _raw(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for tok in split_tokens(text):
            idx, signs = self._pattern(tok)
            v[idx] += signs
        return v


class TrigramEmbedder(EmbeddingProvider):
    """Random Gaussian projection of character-trigram counts."""

    method = "char-trigram-rp"

    def __init__(self, dim: int, seed: int = 0, cache: "EmbeddingCache | None" = None):
        self._rows: dict[str, np.ndarray] = {}
        super().__init__(dim, seed, cache)

    def _row(self, gram: str) -> np.ndarray:
        row = self._rows.get(gram)
        if row is None:
            rng = np.random.default_rng(np.frombuffer(_digest(self.seed, "tri", gram), dtype=np.uint32))
            row = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            self._rows[gram] = row
        return row

    def _raw(self, text: str) -> np.ndarray:
        s = "  " + " ".join(split_tokens(text)) + "  "
        v = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(s) - 2):
            v += self._row(s[i:i + 3])
        return v


PROVIDERS = {HashingEmbedder.method: HashingEmbedder, TrigramEmbedder.method: TrigramEmbedder}


def make_embedder(method: str, dim: int, seed: int = 0, cache_dir: str | Path | None = None) -> EmbeddingProvider:
    try:
        cls = PROVIDERS[method]
    except KeyError:
        raise EmbeddingError(f"unknown embedding method {method!r}; choose from {sorted(PROVIDERS)}")
    cache = EmbeddingCache(cache_dir) if cache_dir is not None else None
    return cls(dim, seed, cache=cache)


class EmbeddingCache:
    """On-disk store: ``manifest.json`` plus little-endian float32 rows in ``vectors.bin``.

    A manifest written by a different provider (tag, seed or dimension) is
    discarded on bind.
    """

    MANIFEST = "manifest.json"
    BLOB = "vectors.bin"

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self._lock = threading.Lock()
        self._rows: dict[str, np.ndarray] = {}
        self._order: list[str] = []
        self._provider: str | None = None
        self._seed: int | None = None
        self._dim: int | None = None
        self.dirty = False

    @staticmethod
    def key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def bind(self, provider: EmbeddingProvider) -> None:
        self._provider, self._seed, self._dim = provider.tag, provider.seed, provider.dim
        self._rows.clear()
        self._order.clear()
        manifest_path = self.directory / self.MANIFEST
        if not manifest_path.exists():
            return
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if (manifest.get("provider"), manifest.get("seed"), manifest.get("dim")) != (
            self._provider,
            self._seed,
            self._dim,
        ):
            return
        blob = np.fromfile(self.directory / self.BLOB, dtype="<f4")
        dim = self._dim
        for k, idx in manifest["entries"].items():
            self._rows[k] = blob[idx * dim:(idx + 1) * dim].astype(np.float32)
            self._order.append(k)

    def get(self, text: str) -> np.ndarray | None:
        row = self._rows.get(self.key(text))
        return None if row is None else row.copy()

    def put(self, text: str, vec32: np.ndarray) -> None:
        with self._lock:
            k = self.key(text)
            if k not in self._rows:
                self._rows[k] = np.asarray(vec32, dtype=np.float32).copy()
                self._order.append(k)
                self.dirty = True

    def __len__(self) -> int:
        return len(self._rows)

    def save(self) -> None:
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            blob = np.zeros((len(self._order), self._dim or 0), dtype="<f4")
            entries = {}
            for i, k in enumerate(self._order):
                blob[i] = self._rows[k]
                entries[k] = i
            blob.tofile(self.directory / self.BLOB)
            manifest = {"provider": self._provider, "seed": self._seed, "dim": self._dim, "entries": entries}
            (self.directory / self.MANIFEST).write_text(json.dumps(manifest, sort_keys=True), encoding="utf-8")
            self.dirty = False
