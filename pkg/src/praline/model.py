"""The joint model and the stitched variant used by the train-separately ablation."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .pointer import DomainPointer
from .ranker import Towers, masked_max_pool
from .seq2seq import Decoder, Encoder, greedy_generate


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d: int = 64
    layers: int = 2
    heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1

    def to_json(self) -> dict:
        return asdict(self)


class Encoded(NamedTuple):
    h: torch.Tensor       # (B, n, d)
    mask: torch.Tensor    # (B, n) bool
    pooled: torch.Tensor  # (B, d)


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    n = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), n), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return ids, ids != pad_id


class Praline(nn.Module):
    """Encoder, fluent-response decoder, domain pointer and ranking towers."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d, padding_idx=0)
        nn.init.normal_(self.embed.weight, std=cfg.d**-0.5)
        with torch.no_grad():
            self.embed.weight[0].zero_()
        self.encoder = Encoder(self.embed, cfg.d, cfg.layers, cfg.heads, cfg.d_ff, cfg.dropout)
        self.decoder = Decoder(self.embed, cfg.d, cfg.layers, cfg.heads, cfg.d_ff, cfg.dropout)
        self.pointer = DomainPointer(cfg.d, cfg.d)
        self.towers = Towers(cfg.d)

    def _check_ids(self, ids: torch.Tensor) -> None:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.cfg.vocab_size):
            raise ValueError(f"token id outside vocabulary of size {self.cfg.vocab_size}")

    def encode_batch(self, ids: torch.Tensor, mask: torch.Tensor) -> Encoded:
        self._check_ids(ids)
        h = self.encoder(ids, mask)
        return Encoded(h, mask, masked_max_pool(h, mask))

    def encode(self, input_ids: Sequence[int]) -> torch.Tensor:
        """Contextual embeddings (n x d) for one token sequence."""
        if not 1 <= len(input_ids) <= 150:
            raise ValueError(f"input length must be 1..150, got {len(input_ids)}")
        ids = torch.as_tensor([list(input_ids)], dtype=torch.long)
        return self.encode_batch(ids, torch.ones_like(ids, dtype=torch.bool)).h[0]

    def decoder_logits(self, enc: Encoded, tgt_in: torch.Tensor, tgt_mask: torch.Tensor) -> torch.Tensor:
        return self.decoder(tgt_in, tgt_mask, enc.h, enc.mask)

    def domain_logprobs(self, enc: Encoded, domain_emb: torch.Tensor) -> torch.Tensor:
        return self.pointer(enc.pooled, domain_emb)

    def conversation_embedding(self, enc: Encoded, domain_vecs: torch.Tensor) -> torch.Tensor:
        return self.towers.conversation(enc.pooled, domain_vecs)

    def path_embedding(self, h_p: torch.Tensor) -> torch.Tensor:
        return self.towers.path(h_p)

    def generate(self, enc: Encoded, bos_id: int, eos_id: int, max_len: int = 50) -> list[list[int]]:
        return greedy_generate(self.decoder, enc.h, enc.mask, bos_id, eos_id, max_len)


class StitchedPraline(nn.Module):
    """Three independently trained models; each task is served by its own encoder."""

    def __init__(self, dm: Praline, rk: Praline, dec: Praline) -> None:
        super().__init__()
        self.dm, self.rk, self.dec = dm, rk, dec
        self.cfg = dm.cfg

    def encode_batch(self, ids, mask):
        return (self.dm.encode_batch(ids, mask), self.rk.encode_batch(ids, mask), self.dec.encode_batch(ids, mask))

    def domain_logprobs(self, enc, domain_emb):
        return self.dm.domain_logprobs(enc[0], domain_emb)

    def conversation_embedding(self, enc, domain_vecs):
        return self.rk.conversation_embedding(enc[1], domain_vecs)

    def path_embedding(self, h_p):
        return self.rk.path_embedding(h_p)

    def generate(self, enc, bos_id, eos_id, max_len=50):
        return self.dec.generate(enc[2], bos_id, eos_id, max_len)


def build_model(cfg: ModelConfig, seed: int) -> Praline:
    torch.manual_seed(seed)
    return Praline(cfg).double()


def named_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
