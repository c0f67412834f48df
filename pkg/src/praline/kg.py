"""Knowledge-graph store: loading, context-path enumeration, labelling, verbalisation.

Tails written in double quotes in the triples file (``"1910"``) are literals.
Literals may end a path but are never expanded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

POSITIVE = "positive"
NEGATIVE = "negative"
UNLABELED = "unlabeled"
INVERSE_PREFIX = "inverse:"


class GraphError(ValueError):
    pass


def is_literal(node: str) -> bool:
    return len(node) >= 2 and node.startswith('"') and node.endswith('"')


@dataclass(frozen=True)
class ContextPath:
    anchor: str
    hops: tuple[tuple[str, str], ...]
    label: str = field(default=UNLABELED, compare=False)

    def __post_init__(self) -> None:
        if not 1 <= len(self.hops) <= 3:
            raise GraphError(f"path must have 1-3 hops, got {len(self.hops)}")

    @property
    def endpoint(self) -> str:
        return self.hops[-1][1]

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.anchor,) + tuple(node for _, node in self.hops)

    @property
    def sort_key(self) -> tuple:
        return (self.anchor, self.hops)

    def to_json(self) -> dict:
        return {
            "anchor": self.anchor,
            "steps": [[rel, node] for rel, node in self.hops],
            "endpoint": self.endpoint,
            "label": self.label,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ContextPath":
        return cls(
            anchor=obj["anchor"],
            hops=tuple((rel, node) for rel, node in obj["steps"]),
            label=obj.get("label", UNLABELED),
        )


class KnowledgeGraph:
    """Immutable triple store with a forward adjacency index."""

    def __init__(
        self,
        triples: Iterable[tuple[str, str, str]],
        entity_labels: Mapping[str, str] | None = None,
        relation_labels: Mapping[str, str] | None = None,
    ) -> None:
        triple_set = set()
        ordered = []
        for t in triples:
            t = tuple(t)
            if t not in triple_set:
                triple_set.add(t)
                ordered.append(t)
        if not ordered:
            raise GraphError("no triples")

        entities = set()
        relations = set()
        adjacency: dict[str, list[tuple[str, str]]] = {}
        for head, rel, tail in ordered:
            if is_literal(head):
                raise GraphError(f"literal {head} cannot be a triple head")
            entities.add(head)
            relations.add(rel)
            if not is_literal(tail):
                entities.add(tail)
            adjacency.setdefault(head, []).append((rel, tail))

        entity_labels = dict(entity_labels or {})
        relation_labels = dict(relation_labels or {})
        self._entities = frozenset(entities)
        self._relations = frozenset(relations)
        self._triples = frozenset(triple_set)
        self._entity_labels = MappingProxyType({e: entity_labels.get(e, e) for e in sorted(entities)})
        self._relation_labels = MappingProxyType({r: relation_labels.get(r, r) for r in sorted(relations)})
        self._adjacency = MappingProxyType({h: tuple(sorted(edges)) for h, edges in adjacency.items()})
        self._inverse: Mapping[str, tuple[tuple[str, str], ...]] | None = None

    entities = property(lambda self: self._entities)
    relations = property(lambda self: self._relations)
    triples = property(lambda self: self._triples)
    entity_labels = property(lambda self: self._entity_labels)
    relation_labels = property(lambda self: self._relation_labels)
    adjacency = property(lambda self: self._adjacency)

    def out_edges(self, node: str) -> tuple[tuple[str, str], ...]:
        return self._adjacency.get(node, ())

    def in_edges(self, node: str) -> tuple[tuple[str, str], ...]:
        """Reversed edges ``(inverse:rel, head)`` pointing back from ``node``."""
        if self._inverse is None:
            inv: dict[str, list[tuple[str, str]]] = {}
            for head, rel, tail in self._triples:
                if not is_literal(tail):
                    inv.setdefault(tail, []).append((INVERSE_PREFIX + rel, head))
            self._inverse = MappingProxyType({k: tuple(sorted(v)) for k, v in inv.items()})
        return self._inverse.get(node, ())

    def label(self, node: str) -> str:
        if is_literal(node):
            return node[1:-1]
        return self._entity_labels.get(node, node)

    def relation_label(self, rel: str) -> str:
        if rel.startswith(INVERSE_PREFIX):
            base = rel[len(INVERSE_PREFIX):]
            return INVERSE_PREFIX + " " + self._relation_labels.get(base, base)
        return self._relation_labels.get(rel, rel)

    def find_entities_by_label(self, text: str) -> set[str]:
        """Naive exact-label matcher: entities whose full label occurs in ``text``."""
        from .text import split_tokens

        toks = split_tokens(text)
        joined = " " + " ".join(toks) + " "
        found = set()
        for ent, lab in self._entity_labels.items():
            lab_toks = split_tokens(lab)
            if lab_toks and (" " + " ".join(lab_toks) + " ") in joined:
                found.add(ent)
        return found

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(entities={len(self._entities)}, relations={len(self._relations)}, "
            f"triples={len(self._triples)})"
        )


def _read_tsv(path: Path, columns: int) -> list[tuple[str, ...]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != columns:
                raise GraphError(
                    f"{path}: line {lineno}: expected {columns} tab-separated columns, got {len(parts)}"
                )
            rows.append(tuple(parts))
    return rows


def load_graph(triples_file: str | Path, labels_file: str | Path | None = None) -> KnowledgeGraph:
    """Load ``head\\trelation\\ttail`` triples plus an ``id\\tlabel`` file.

    The labels file covers entities and relations alike; unlabeled ids fall
    back to the id string.
    """
    triples = _read_tsv(Path(triples_file), 3)
    if not triples:
        raise GraphError(f"{triples_file}: no triples")
    labels = dict(_read_tsv(Path(labels_file), 2)) if labels_file is not None else {}
    return KnowledgeGraph(triples, labels, labels)


def extract_context_paths(
    graph: KnowledgeGraph,
    context_entities: Iterable[str],
    max_hops: int = 3,
    include_inverse: bool = False,
) -> list[ContextPath]:
    """All simple forward paths of 1..max_hops hops from each context entity."""
    if max_hops not in (1, 2, 3):
        raise GraphError(f"max_hops must be 1, 2 or 3, got {max_hops}")
    anchors = sorted(set(context_entities))
    for a in anchors:
        if a not in graph.entities:
            raise GraphError(f"unknown context entity {a!r}")

    paths: list[ContextPath] = []

    def expand(node: str) -> tuple[tuple[str, str], ...]:
        if include_inverse:
            return graph.out_edges(node) + graph.in_edges(node)
        return graph.out_edges(node)

    def walk(anchor: str, node: str, hops: tuple, visited: frozenset) -> None:
        for rel, nxt in expand(node):
            if nxt in visited:
                continue
            new_hops = hops + ((rel, nxt),)
            paths.append(ContextPath(anchor, new_hops))
            if len(new_hops) < max_hops and not is_literal(nxt):
                walk(anchor, nxt, new_hops, visited | {nxt})

    for a in anchors:
        walk(a, a, (), frozenset([a]))
    paths.sort(key=lambda p: p.sort_key)
    return paths


def label_paths(
    paths: Iterable[ContextPath], gold_answers: Iterable[str]
) -> tuple[list[ContextPath], list[ContextPath]]:
    gold = set(gold_answers)
    positives, negatives = [], []
    for p in paths:
        if p.endpoint in gold:
            positives.append(replace(p, label=POSITIVE))
        else:
            negatives.append(replace(p, label=NEGATIVE))
    return positives, negatives


def verbalize_path(path: ContextPath, graph: KnowledgeGraph) -> str:
    parts = [graph.label(path.anchor)]
    for rel, node in path.hops:
        parts.append(graph.relation_label(rel))
        parts.append(graph.label(node))
    return " ".join(parts)


def dump_paths_jsonl(paths: Iterable[ContextPath], fh) -> None:
    for p in paths:
        fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")
