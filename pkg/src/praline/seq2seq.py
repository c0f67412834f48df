"""Transformer encoder and autoregressive decoder trained from scratch.

Pre-layer-norm blocks, learned positional tables, and a token embedding
table shared between encoder and decoder.  Padding id is 0 throughout.
"""

from __future__ import annotations

import math
from typing import Sequence

import torch
from torch import nn
import torch.nn.functional as F

from .corpus import ANS, MAX_INPUT_LEN, MAX_TARGET_LEN


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int, dropout: float) -> None:
        super().__init__()
        if d % heads:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mem: torch.Tensor, keep: torch.Tensor) -> torch.Tensor:
        # keep: bool, broadcastable to (B, heads, Lq, Lk)
        B, Lq, d = x.shape
        Lk = mem.shape[1]
        h = self.heads
        q = self.q(x).view(B, Lq, h, d // h).transpose(1, 2)
        k = self.k(mem).view(B, Lk, h, d // h).transpose(1, 2)
        v = self.v(mem).view(B, Lk, h, d // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        scores = scores.masked_fill(~keep, torch.finfo(scores.dtype).min)
        attn = self.drop(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(B, Lq, d)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, d: int, d_ff: int, dropout: float) -> None:
        super().__init__()
        self.fc1 = nn.Linear(d, d_ff)
        self.fc2 = nn.Linear(d_ff, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.drop(F.gelu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, d_ff: int, dropout: float) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, dropout)
        self.ln2 = nn.LayerNorm(d)
        self.ff = FeedForward(d, d_ff, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, keep: torch.Tensor) -> torch.Tensor:
        y = self.ln1(x)
        x = x + self.drop(self.attn(y, y, keep))
        return x + self.drop(self.ff(self.ln2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, d_ff: int, dropout: float) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, dropout)
        self.ln2 = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, dropout)
        self.ln3 = nn.LayerNorm(d)
        self.ff = FeedForward(d, d_ff, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mem, self_keep, cross_keep) -> torch.Tensor:
        y = self.ln1(x)
        x = x + self.drop(self.self_attn(y, y, self_keep))
        x = x + self.drop(self.cross_attn(self.ln2(x), mem, cross_keep))
        return x + self.drop(self.ff(self.ln3(x)))


class Encoder(nn.Module):
    def __init__(self, embed: nn.Embedding, d: int, layers: int, heads: int, d_ff: int, dropout: float):
        super().__init__()
        self.embed = embed
        self.pos = nn.Parameter(torch.randn(MAX_INPUT_LEN, d) * d**-0.5)
        self.layers = nn.ModuleList(EncoderLayer(d, heads, d_ff, dropout) for _ in range(layers))
        self.ln = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """ids, mask: (B, n); returns h_enc (B, n, d)."""
        n = ids.shape[1]
        if n > MAX_INPUT_LEN:
            raise ValueError(f"input length {n} exceeds {MAX_INPUT_LEN}")
        x = self.drop(self.embed(ids) + self.pos[:n])
        keep = mask[:, None, None, :]
        for layer in self.layers:
            x = layer(x, keep)
        return self.ln(x)


class Decoder(nn.Module):
    def __init__(self, embed: nn.Embedding, d: int, layers: int, heads: int, d_ff: int, dropout: float):
        super().__init__()
        self.embed = embed
        self.pos = nn.Parameter(torch.randn(MAX_TARGET_LEN, d) * d**-0.5)
        self.layers = nn.ModuleList(DecoderLayer(d, heads, d_ff, dropout) for _ in range(layers))
        self.ln = nn.LayerNorm(d)
        self.out = nn.Linear(d, embed.num_embeddings, bias=False)  # W^(dec)
        self.drop = nn.Dropout(dropout)

    def forward(self, tgt_in: torch.Tensor, tgt_mask: torch.Tensor, mem: torch.Tensor, mem_mask: torch.Tensor):
        """Logits (B, L, |V|) for decoder inputs ``tgt_in`` (B, L)."""
        L = tgt_in.shape[1]
        if L > MAX_TARGET_LEN:
            raise ValueError(f"target length {L} exceeds {MAX_TARGET_LEN}")
        x = self.drop(self.embed(tgt_in) + self.pos[:L])
        causal = torch.ones(L, L, dtype=torch.bool, device=tgt_in.device).tril()
        self_keep = causal[None, None] & tgt_mask[:, None, None, :]
        cross_keep = mem_mask[:, None, None, :]
        for layer in self.layers:
            x = layer(x, mem, self_keep, cross_keep)
        return self.out(self.ln(x))


def shift_right(targets: torch.Tensor, bos_id: int) -> torch.Tensor:
    bos = torch.full((targets.shape[0], 1), bos_id, dtype=targets.dtype, device=targets.device)
    return torch.cat([bos, targets[:, :-1]], dim=1)


def decoder_nll(logits: torch.Tensor, targets: torch.Tensor, pad_id: int = 0) -> torch.Tensor:
    """Per-sequence summed negative log-likelihood, shape (B,)."""
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(picked * (targets != pad_id).to(picked.dtype)).sum(dim=1)


def sequence_nll(distributions: torch.Tensor, target_ids: Sequence[int]) -> torch.Tensor:
    """Summed NLL of gold tokens under explicit per-step distributions (n_tgt, |V|)."""
    if len(target_ids) == 0:
        raise ValueError("empty target")
    idx = torch.as_tensor(list(target_ids), dtype=torch.long)
    return -torch.log(distributions[torch.arange(len(idx)), idx]).sum()


@torch.no_grad()
def greedy_generate(
    decoder: Decoder,
    mem: torch.Tensor,
    mem_mask: torch.Tensor,
    bos_id: int,
    eos_id: int,
    max_len: int = MAX_TARGET_LEN,
) -> list[list[int]]:
    """Greedy argmax decoding from ``[BOS]``; returned sequences exclude ``[EOS]``."""
    B = mem.shape[0]
    max_len = min(max_len, MAX_TARGET_LEN)
    seq = torch.full((B, 1), bos_id, dtype=torch.long, device=mem.device)
    done = torch.zeros(B, dtype=torch.bool)
    out: list[list[int]] = [[] for _ in range(B)]
    for _ in range(max_len):
        logits = decoder(seq, torch.ones_like(seq, dtype=torch.bool), mem, mem_mask)
        nxt = logits[:, -1].argmax(dim=-1)
        for b in range(B):
            if done[b]:
                continue
            tok = int(nxt[b])
            if tok == eos_id:
                done[b] = True
            else:
                out[b].append(tok)
        if bool(done.all()):
            break
        seq = torch.cat([seq, nxt[:, None]], dim=1)
    return out


def substitute_answer(generated_tokens: Sequence[str], answer_label: str) -> str:
    """Fill every ``[ANS]`` slot with the answer; append it when the slot is missing."""
    if isinstance(generated_tokens, str):
        generated_tokens = generated_tokens.split()
    if ANS in generated_tokens:
        return " ".join(answer_label if t == ANS else t for t in generated_tokens)
    return " ".join([*generated_tokens, answer_label])
