"""Domain identification pointer over a growable domain vocabulary."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn


class DomainVocabulary:
    """Ordered domain labels with their frozen embeddings (one row per label)."""

    def __init__(self, labels: Sequence[str], embeddings: np.ndarray) -> None:
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.ndim != 2 or embeddings.shape[0] != len(labels):
            raise ValueError("domain embeddings must have one row per label")
        self.labels = list(labels)
        self.embeddings = embeddings

    @classmethod
    def from_embedder(cls, labels: Sequence[str], embedder) -> "DomainVocabulary":
        return cls(labels, embedder.embed_domains(list(labels)))

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def extend(self, label: str, embedder) -> int:
        """Append a domain at inference time; existing rows are untouched."""
        if label in self.labels:
            return self.labels.index(label)
        self.labels.append(label)
        self.embeddings = np.vstack([self.embeddings, embedder.embed_domains([label])])
        return len(self.labels) - 1


class DomainPointer(nn.Module):
    """score_j = W1 . tanh(W2 tau_j + max-pooled h_enc); softmax over j.

    W1: 1 x d_kg, W2: d x d_kg.  Because the pooled encoder state (size d) is
    added to W2 tau_j, the score needs d == d_kg.
    """

    def __init__(self, d: int, d_kg: int) -> None:
        super().__init__()
        if d != d_kg:
            raise ValueError(f"domain pointer requires d == d_kg, got {d} and {d_kg}")
        self.W1 = nn.Parameter(torch.empty(1, d_kg))
        self.W2 = nn.Parameter(torch.empty(d, d_kg))
        nn.init.xavier_uniform_(self.W1)
        nn.init.xavier_uniform_(self.W2)

    def scores(self, pooled: torch.Tensor, domain_emb: torch.Tensor) -> torch.Tensor:
        """pooled (B, d), domain_emb (n_dm, d_kg) -> unnormalised scores (B, n_dm)."""
        if domain_emb.shape[0] == 0:
            raise ValueError("empty domain vocabulary")
        proj = domain_emb @ self.W2.T  # (n_dm, d)
        u = torch.tanh(proj[None, :, :] + pooled[:, None, :])
        return (u @ self.W1.T).squeeze(-1)

    def forward(self, pooled: torch.Tensor, domain_emb: torch.Tensor) -> torch.Tensor:
        return torch.log_softmax(self.scores(pooled, domain_emb), dim=-1)


def score_domains(h_enc, vocab: DomainVocabulary, pointer: DomainPointer) -> np.ndarray:
    """Domain distribution for one encoded sequence ``h_enc`` (n x d)."""
    if len(vocab) == 0:
        raise ValueError("empty domain vocabulary")
    h = torch.as_tensor(h_enc)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("h_enc must be a non-empty n x d matrix")
    with torch.no_grad():
        W = pointer.W1.dtype
        pooled = h.to(W).max(dim=0).values[None]
        emb = torch.as_tensor(vocab.embeddings, dtype=W)
        probs = torch.softmax(pointer.scores(pooled, emb), dim=-1)[0]
    return probs.numpy()


def pointer_loss(omega: Sequence[float], gold_domain_id: int) -> float:
    omega = np.asarray(omega, dtype=np.float64)
    if not 0 <= gold_domain_id < len(omega):
        raise IndexError(f"gold domain id {gold_domain_id} outside vocabulary of {len(omega)}")
    return float(-np.log(omega[gold_domain_id]))


def predict_domain(omega: Sequence[float]) -> int:
    # np.argmax returns the first maximum, i.e. the lowest id on ties
    return int(np.argmax(np.asarray(omega)))
