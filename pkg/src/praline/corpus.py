"""Conversation records, tokenizer, input-sequence assembly and batch sampling."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .kg import ContextPath
from .text import split_tokens

PAD, BOS, EOS, UNK, SEP, ANS = "[PAD]", "[BOS]", "[EOS]", "[UNK]", "[SEP]", "[ANS]"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK, SEP, ANS)

MAX_INPUT_LEN = 150
MAX_TARGET_LEN = 50

HISTORY_MODES = ("full", "previous_turn_only", "none")
RESPONSE_MODES = ("fluent", "bare_answer")


class SchemaError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class Turn:
    question: str
    answers: list[str]
    answer_labels: list[str]
    fluent_response: str
    context_entities: list[str]
    positives: list[ContextPath] = field(default_factory=list)
    negatives: list[ContextPath] = field(default_factory=list)

    def to_json(self, with_paths: bool = False) -> dict:
        obj = {
            "question": self.question,
            "answers": list(self.answers),
            "answer_labels": list(self.answer_labels),
            "fluent_response": self.fluent_response,
            "context_entities": list(self.context_entities),
        }
        if with_paths:
            obj["positives"] = [p.to_json() for p in self.positives]
            obj["negatives"] = [p.to_json() for p in self.negatives]
        return obj


@dataclass
class Conversation:
    id: str
    domain: str
    turns: list[Turn]

    def to_json(self, with_paths: bool = False) -> dict:
        return {"id": self.id, "domain": self.domain, "turns": [t.to_json(with_paths) for t in self.turns]}


_TURN_KEYS = ("question", "answers", "answer_labels", "fluent_response", "context_entities")


def parse_conversation(obj: dict, where: str = "") -> Conversation:
    cid = obj.get("id", "<missing id>")
    for key in ("id", "domain", "turns"):
        if key not in obj:
            raise SchemaError(f"{where}conversation {cid}: missing key {key!r}")
    if not obj["domain"]:
        raise SchemaError(f"{where}conversation {cid}: empty domain")
    if not obj["turns"]:
        raise SchemaError(f"{where}conversation {cid}: no turns")
    turns = []
    for i, t in enumerate(obj["turns"]):
        for key in _TURN_KEYS:
            if key not in t:
                raise SchemaError(f"{where}conversation {cid}: turn {i}: missing key {key!r}")
        if not t["answers"]:
            raise SchemaError(f"{where}conversation {cid}: turn {i}: key 'answers' is empty")
        turn = Turn(
            question=t["question"],
            answers=list(t["answers"]),
            answer_labels=list(t["answer_labels"]),
            fluent_response=t["fluent_response"],
            context_entities=list(t["context_entities"]),
            positives=[ContextPath.from_json(p) for p in t.get("positives", [])],
            negatives=[ContextPath.from_json(p) for p in t.get("negatives", [])],
        )
        turns.append(turn)
    return Conversation(id=str(obj["id"]), domain=obj["domain"], turns=turns)


def load_conversations(path: str | Path) -> list[Conversation]:
    convs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            convs.append(parse_conversation(obj, where=f"{path}: line {lineno}: "))
    return convs


def write_conversations(convs: Iterable[Conversation], path: str | Path, with_paths: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in convs:
            fh.write(json.dumps(c.to_json(with_paths), ensure_ascii=False, sort_keys=True) + "\n")


def load_domain_vocabulary(path: str | Path) -> list[str]:
    labels = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not labels:
        raise SchemaError(f"{path}: empty domain vocabulary")
    if len(set(labels)) != len(labels):
        raise SchemaError(f"{path}: duplicate domain labels")
    return labels


def split_conversations(
    convs: Sequence[Conversation], fractions: Sequence[float] = (0.7, 0.15, 0.15), seed: int = 0
) -> tuple[list[Conversation], list[Conversation], list[Conversation]]:
    """Deterministic train/valid/test split at conversation level."""
    order = np.random.default_rng(seed).permutation(len(convs))
    n_train = int(round(fractions[0] * len(convs)))
    n_valid = int(round(fractions[1] * len(convs)))
    pick = [convs[i] for i in order]
    return pick[:n_train], pick[n_train:n_train + n_valid], pick[n_train + n_valid:]


class Tokenizer:
    """Lowercasing word/punctuation tokenizer with a corpus-built vocabulary."""

    def __init__(self, tokens: Sequence[str]) -> None:
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens in canonical order")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Tokenizer":
        counts = Counter()
        for t in texts:
            counts.update(tok for tok in split_tokens(t) if tok not in SPECIAL_TOKENS)
        words = sorted(w for w, c in counts.items() if c >= min_count)
        return cls(list(SPECIAL_TOKENS) + words)

    def __len__(self) -> int:
        return len(self.itos)

    pad_id = property(lambda self: self.stoi[PAD])
    bos_id = property(lambda self: self.stoi[BOS])
    eos_id = property(lambda self: self.stoi[EOS])
    unk_id = property(lambda self: self.stoi[UNK])
    sep_id = property(lambda self: self.stoi[SEP])
    ans_id = property(lambda self: self.stoi[ANS])

    def tokenize(self, text: str) -> list[str]:
        return split_tokens(text)

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self.stoi.get(tok, unk) for tok in split_tokens(text)]

    def decode_tokens(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.decode_tokens(ids))

    def to_json(self) -> list[str]:
        return list(self.itos)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.itos, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


def corpus_texts(convs: Iterable[Conversation]) -> Iterator[str]:
    for c in convs:
        for t in c.turns:
            yield t.question
            yield t.fluent_response
            yield from t.answer_labels


def bare_answer_text(labels: Sequence[str]) -> str:
    return " , ".join(labels)


def assemble_input(
    history: Sequence[tuple[str, str]],
    question: str,
    tokenizer: Tokenizer,
    history_mode: str = "full",
    max_len: int = MAX_INPUT_LEN,
) -> list[int]:
    """``q0 [SEP] r0 [SEP] ... [SEP] q_t`` with left truncation to ``max_len``.

    ``history`` holds (question, response-text) pairs of earlier turns; the
    caller decides whether the response is fluent or a bare answer.
    """
    if history_mode not in HISTORY_MODES:
        raise ConfigError(f"history_mode must be one of {HISTORY_MODES}, got {history_mode!r}")
    if history_mode == "none":
        history = []
    elif history_mode == "previous_turn_only":
        history = list(history)[-1:]
    sep = tokenizer.sep_id
    ids: list[int] = []
    for q, r in history:
        if ids:
            ids.append(sep)
        ids.extend(tokenizer.encode(q))
        ids.append(sep)
        ids.extend(tokenizer.encode(r))
    if ids:
        ids.append(sep)
    ids.extend(tokenizer.encode(question))
    return ids[-max_len:]


def gold_history(conversation: Conversation, turn_index: int, response_mode: str) -> list[tuple[str, str]]:
    if response_mode not in RESPONSE_MODES:
        raise ConfigError(f"response_mode must be one of {RESPONSE_MODES}, got {response_mode!r}")
    out = []
    for t in conversation.turns[:turn_index]:
        r = t.fluent_response if response_mode == "fluent" else bare_answer_text(t.answer_labels)
        out.append((t.question, r))
    return out


def build_input_sequence(
    conversation: Conversation,
    turn_index: int,
    tokenizer: Tokenizer,
    history_mode: str = "full",
    response_mode: str = "fluent",
) -> list[int]:
    if not 0 <= turn_index < len(conversation.turns):
        raise IndexError(f"turn_index {turn_index} out of range for {len(conversation.turns)} turns")
    history = gold_history(conversation, turn_index, response_mode)
    return assemble_input(history, conversation.turns[turn_index].question, tokenizer, history_mode)


def mark_answer(response: str, answer_labels: Sequence[str]) -> tuple[str, bool]:
    """Replace answer-label occurrences in ``response`` by ``[ANS]``; returns (text, matched)."""
    out = response
    matched = False
    for lab in sorted({lab for lab in answer_labels if lab}, key=len, reverse=True):
        pattern = re.compile(r"(?<!\w)" + re.escape(lab) + r"(?!\w)")
        out, n = pattern.subn(f" {ANS} ", out)
        matched = matched or n > 0
    return out, matched


def build_target(response: str, answer_labels: Sequence[str], tokenizer: Tokenizer) -> tuple[list[int], bool]:
    text, matched = mark_answer(response, answer_labels)
    ids = tokenizer.encode(text)[: MAX_TARGET_LEN - 1] + [tokenizer.eos_id]
    return ids, matched


@dataclass
class TrainingInstance:
    input_ids: list[int]
    target_ids: list[int]
    domain_id: int
    positives: list[ContextPath]
    negatives: list[ContextPath]
    conversation_id: str = ""
    turn_index: int = 0
    answer_matched: bool = True

    def __post_init__(self) -> None:
        if len(self.input_ids) > MAX_INPUT_LEN:
            raise ValueError(f"input sequence longer than {MAX_INPUT_LEN}")
        if not 1 <= len(self.target_ids) <= MAX_TARGET_LEN:
            raise ValueError(f"target length must be 1..{MAX_TARGET_LEN}")

    @property
    def rankable(self) -> bool:
        return bool(self.positives or self.negatives)


@dataclass
class Batch:
    """One training batch.

    ``rk_labels`` is +1/-1 for rankable elements and 0 for the ones flagged
    ``no_rank`` (both path sets empty); ``sampled_paths`` is None there.
    """

    instances: list[TrainingInstance]
    rk_labels: list[int]
    sampled_paths: list[ContextPath | None]
    no_rank: list[bool]

    def __len__(self) -> int:
        return len(self.instances)


def make_batches(
    instances: Sequence[TrainingInstance], batch_size: int, seed: int, epoch: int = 0
) -> list[Batch]:
    """One epoch of batches; the stream is a pure function of (seed, epoch, instances)."""
    if batch_size < 2 or batch_size % 2:
        raise ConfigError(f"batch_size must be even and >= 2, got {batch_size}")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(instances))
    batches = []
    for start in range(0, len(order), batch_size):
        members = [instances[i] for i in order[start:start + batch_size]]
        labels = [0] * len(members)
        free = []
        for j, inst in enumerate(members):
            if not inst.rankable:
                continue
            if not inst.positives:
                labels[j] = -1
            elif not inst.negatives:
                labels[j] = 1
            else:
                free.append(j)
        rankable = sum(1 for inst in members if inst.rankable)
        forced_pos = sum(1 for lab in labels if lab == 1)
        want_pos = min(max(rankable // 2 - forced_pos, 0), len(free))
        chosen = set(rng.permutation(free)[:want_pos].tolist()) if free else set()
        for j in free:
            labels[j] = 1 if j in chosen else -1
        paths: list[ContextPath | None] = []
        for j, inst in enumerate(members):
            if labels[j] == 1:
                paths.append(inst.positives[int(rng.integers(len(inst.positives)))])
            elif labels[j] == -1:
                paths.append(inst.negatives[int(rng.integers(len(inst.negatives)))])
            else:
                paths.append(None)
        batches.append(Batch(members, labels, paths, [lab == 0 for lab in labels]))
    return batches
