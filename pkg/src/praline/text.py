"""Shared text normalisation used by the tokenizer and the embedding providers."""

from __future__ import annotations

import re

SPECIAL_TOKEN_RE = r"\[(?:PAD|BOS|EOS|UNK|SEP|ANS)\]"
_TOKEN_RE = re.compile(SPECIAL_TOKEN_RE + r"|\w+|[^\w\s]", re.UNICODE)


def split_tokens(text: str) -> list[str]:
    """Lowercased word/punctuation split; special tokens survive untouched."""
    out = []
    for tok in _TOKEN_RE.findall(text):
        out.append(tok if tok.startswith("[") and tok.endswith("]") and len(tok) > 2 else tok.lower())
    return out
