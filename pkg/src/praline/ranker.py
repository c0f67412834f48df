"""Dual-tower contrastive ranking of context paths."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .kg import ContextPath

DEFAULT_MARGIN = 0.1


class Towers(nn.Module):
    """phi_c = tanh(W2c relu(W1c [pooled; h_dm])), phi_p = tanh(W2p relu(W1p h_p))."""

    def __init__(self, d: int) -> None:
        super().__init__()
        self.d = d
        self.conv1 = nn.Linear(2 * d, d, bias=False)
        self.conv2 = nn.Linear(d, d, bias=False)
        self.path1 = nn.Linear(d, d, bias=False)
        self.path2 = nn.Linear(d, d, bias=False)

    def conversation(self, pooled: torch.Tensor, domain: torch.Tensor) -> torch.Tensor:
        if pooled.shape[-1] != self.d or domain.shape[-1] != self.d:
            raise ValueError(
                f"conversation tower expects {self.d}-dim inputs, got {pooled.shape[-1]} and {domain.shape[-1]}"
            )
        x = torch.cat([pooled, domain], dim=-1)
        return torch.tanh(self.conv2(torch.relu(self.conv1(x))))

    def path(self, h_p: torch.Tensor) -> torch.Tensor:
        if h_p.shape[-1] != self.d:
            raise ValueError(f"path tower expects {self.d}-dim input, got {h_p.shape[-1]}")
        return torch.tanh(self.path2(torch.relu(self.path1(h_p))))


def masked_max_pool(h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Elementwise max over the real (unpadded) token rows: (B, n, d) -> (B, d)."""
    fill = torch.finfo(h.dtype).min
    return h.masked_fill(~mask[:, :, None], fill).max(dim=1).values


def pool_encoder(h_enc) -> np.ndarray:
    h = np.asarray(h_enc)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("pool_encoder needs at least one token row")
    return h.max(axis=0)


def cosine_torch(a: torch.Tensor, b: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    num = (a * b).sum(dim=-1)
    den = torch.sqrt((a * a).sum(dim=-1) * (b * b).sum(dim=-1)).clamp_min(eps)
    return num / den


def ranking_loss_torch(cos: torch.Tensor, y: torch.Tensor, margin: float = DEFAULT_MARGIN) -> torch.Tensor:
    """Per-element cosine embedding loss; y holds +1/-1."""
    pos = 1.0 - cos
    neg = torch.relu(cos - margin)
    return torch.where(y > 0, pos, neg)


def score(phi_c, phi_p) -> float:
    a = np.asarray(phi_c, dtype=np.float64)
    b = np.asarray(phi_p, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("degenerate embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def ranking_loss(phi_c, phi_p, y: int, margin: float = DEFAULT_MARGIN) -> float:
    if y not in (1, -1):
        raise ValueError(f"ranking label must be 1 or -1, got {y}")
    if not 0.0 <= margin < 1.0:
        raise ValueError(f"margin must be in [0, 1), got {margin}")
    c = score(phi_c, phi_p)
    return 1.0 - c if y == 1 else max(0.0, c - margin)


@dataclass(frozen=True)
class RankedCandidates:
    items: tuple[tuple[ContextPath, float], ...]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def paths(self) -> list[ContextPath]:
        return [p for p, _ in self.items]

    def answers(self) -> list[tuple[str, float]]:
        """Endpoints in ranked order, keeping each endpoint's first (best) occurrence."""
        seen = set()
        out = []
        for p, s in self.items:
            if p.endpoint not in seen:
                seen.add(p.endpoint)
                out.append((p.endpoint, s))
        return out

    def to_json(self, turn=None) -> dict:
        return {"turn": turn, "ranking": [{"path": p.to_json(), "score": s} for p, s in self.items]}


def rank_by_scores(paths: Sequence[ContextPath], scores: Sequence[float]) -> RankedCandidates:
    """Descending score; ties keep canonical path order."""
    order = sorted(range(len(paths)), key=lambda i: (-float(scores[i]), paths[i].sort_key))
    return RankedCandidates(tuple((paths[i], float(scores[i])) for i in order))


def rank_candidates(phi_c, candidates: Sequence[tuple[ContextPath, np.ndarray]]) -> RankedCandidates:
    if not candidates:
        return RankedCandidates(())
    paths = [p for p, _ in candidates]
    scores = [score(phi_c, v) for _, v in candidates]
    return rank_by_scores(paths, scores)
