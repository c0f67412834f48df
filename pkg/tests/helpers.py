"""Shared builders for tests: a tiny gradient-check problem and a small benchmark."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import torch

from praline.corpus import Conversation, Tokenizer, TrainingInstance, Turn, make_batches
from praline.corpus import load_conversations, load_domain_vocabulary, split_conversations
from praline.embedder import HashingEmbedder, make_embedder
from praline.kg import KnowledgeGraph, extract_context_paths, label_paths, load_graph
from praline.model import build_model
from praline.pointer import DomainVocabulary
from praline.synth import SynthSpec, generate_synthetic_benchmark
from praline.trainer import Hyperparameters, RunData, StepContext, _PathVectors, tiny_config

GRAPH = [
    ("A", "r1", "B"), ("A", "r2", "C"), ("B", "r1", "C"), ("B", "r3", "D"),
    ("C", "r2", "D"), ("D", "r1", "A"), ("C", "r3", '"7"'),
]
WORDS = "who is the r one of a b c d ? seven".split()


def gradcheck_problem(seed: int = 0, d: int = 8):
    """Four-element batch on a 14-word vocabulary (20 tokens with specials)."""
    graph = KnowledgeGraph(GRAPH, {"A": "a", "B": "b", "C": "c", "D": "d"}, {"r1": "r one"})
    tok = Tokenizer.build([" ".join(WORDS)])
    assert len(tok) <= 20
    emb = HashingEmbedder(d, seed=1)
    domains = DomainVocabulary.from_embedder(["alpha", "beta"], emb)
    insts = []
    for i, (anchor, gold, q) in enumerate([("A", "C", "who is a ?"), ("B", "D", "the r one of b ?"),
                                           ("C", "D", "c ?"), ("D", "B", "who is d ? seven")]):
        pos, neg = label_paths(extract_context_paths(graph, [anchor], 2), [gold])
        insts.append(TrainingInstance(tok.encode(q), tok.encode("the " + q) + [tok.eos_id], i % 2, pos, neg))
    batch = make_batches(insts, 4, seed, 0)[0]
    ctx = StepContext(tok, torch.as_tensor(domains.embeddings), _PathVectors(graph, emb), True, 0.1)
    model = build_model(tiny_config(len(tok), d), seed)
    return model, batch, ctx


SMALL_SPEC = SynthSpec(n_entities=60, n_conversations=48)


def small_hp(**kw) -> Hyperparameters:
    base = Hyperparameters(d=16, layers=1, heads=2, d_ff=32, epochs=3, batch_size=8, dropout=0.0)
    return replace(base, **kw)


def small_data(root: Path, spec: SynthSpec = SMALL_SPEC, dim: int = 16, method: str = "hashed-bag") -> RunData:
    files = generate_synthetic_benchmark(spec, root)
    g = load_graph(files.triples_file, files.labels_file)
    convs = load_conversations(files.conversations_file)
    tr, va, te = split_conversations(convs, seed=spec.seed)
    return RunData.build(g, tr, va, te, load_domain_vocabulary(files.domains_file), make_embedder(method, dim, 0))


__all__ = ["gradcheck_problem", "small_data", "small_hp", "SMALL_SPEC", "Conversation", "Turn"]
