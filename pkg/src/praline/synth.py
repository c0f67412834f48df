"""Synthetic conversational KG-QA benchmark.

Relations are partitioned by domain, and every domain reuses the same small
bank of relation *slots* (creator, release year, ...).  Questions mention
the slot but never the domain after the first turn, so the relation a
follow-up question refers to is ambiguous without the dialog history or
the domain.  Entities carry edges of the same slot in two domains, which
makes that ambiguity show up in the candidate path sets.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import Conversation, Turn, write_conversations
from .kg import KnowledgeGraph, extract_context_paths, is_literal, label_paths


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class DomainTemplate:
    name: str
    canonical: str
    synonyms: tuple[str, ...]


@dataclass(frozen=True)
class SlotTemplate:
    relation_noun: str
    question_noun: str
    literal: bool = False


DOMAIN_BANK = (
    DomainTemplate("books", "book", ("book", "novel", "story", "volume")),
    DomainTemplate("movies", "film", ("movie", "film", "picture", "feature")),
    DomainTemplate("music", "album", ("album", "record", "lp", "release")),
    DomainTemplate("soccer", "club", ("club", "team", "squad", "side")),
    DomainTemplate("tv series", "show", ("show", "series", "sitcom", "programme")),
    DomainTemplate("games", "game", ("game", "videogame", "title", "cartridge")),
    DomainTemplate("art", "painting", ("painting", "artwork", "canvas", "piece")),
    DomainTemplate("science", "theory", ("theory", "hypothesis", "model", "conjecture")),
)

SLOT_BANK = (
    SlotTemplate("creator", "maker"),
    SlotTemplate("release year", "year", literal=True),
    SlotTemplate("country of origin", "origin"),
    SlotTemplate("genre", "kind"),
    SlotTemplate("award received", "prize"),
    SlotTemplate("followed by", "successor"),
    SlotTemplate("narrative location", "place"),
    SlotTemplate("original language", "language"),
)

FIRST_QUESTION_TEMPLATES = (
    "what is the {chain} of the {syn} {ref} ?",
    "tell me the {chain} of the {syn} {ref} .",
    "do you know the {chain} of the {syn} {ref} ?",
)
FOLLOWUP_QUESTION_TEMPLATES = (
    "and what is the {chain} of {pron} ?",
    "what about the {chain} of {pron} ?",
    "which is the {chain} of {pron} ?",
)
FIRST_RESPONSE_TEMPLATE = "the {chain} of the {canon} {ref} is {ans} ."
FOLLOWUP_RESPONSE_TEMPLATE = "the {chain} is {ans} ."

_ONSETS = ("br", "k", "m", "t", "v", "s", "l", "d", "g", "n", "p", "r", "z", "f", "h", "j")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_CODAS = ("", "n", "r", "l", "s", "x")


@dataclass(frozen=True)
class SynthSpec:
    n_domains: int = 4
    n_entities: int = 200
    n_relations: int = 12
    n_conversations: int = 300
    turns_per_conversation: int = 3
    seed: int = 7
    max_hops: int = 3
    corruption_rate: float = 0.0
    slots_per_entity: int = 2
    domains_per_slot: int = 2
    hop_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)

    def validate(self) -> None:
        for name in ("n_entities", "n_relations", "n_conversations", "turns_per_conversation"):
            if getattr(self, name) < 1:
                raise InfeasibleSpec(f"{name} must be >= 1")
        if self.n_domains < 2:
            raise InfeasibleSpec("n_domains must be >= 2")
        if self.n_domains > len(DOMAIN_BANK):
            raise InfeasibleSpec(f"at most {len(DOMAIN_BANK)} domain templates are available")
        if self.n_relations < self.n_domains:
            raise InfeasibleSpec("need at least one relation per domain")
        if math.ceil(self.n_relations / self.n_domains) > len(SLOT_BANK):
            raise InfeasibleSpec(
                f"more relations per domain ({math.ceil(self.n_relations / self.n_domains)}) "
                f"than template slots ({len(SLOT_BANK)})"
            )
        if self.n_entities < 2:
            raise InfeasibleSpec("n_entities must be >= 2")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise InfeasibleSpec("corruption_rate must be in [0, 1)")
        if self.max_hops not in (1, 2, 3):
            raise InfeasibleSpec("max_hops must be 1, 2 or 3")


@dataclass
class SynthOutput:
    triples_file: Path
    labels_file: Path
    conversations_file: Path
    domains_file: Path
    spec_file: Path


def _entity_names(n: int, rng: np.random.Generator) -> list[str]:
    names: list[str] = []
    seen = set()
    while len(names) < n:
        words = []
        for _ in range(int(rng.integers(1, 3))):
            sylls = int(rng.integers(2, 4))
            w = "".join(
                _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(sylls)
            ) + _CODAS[rng.integers(len(_CODAS))]
            words.append(w.capitalize())
        name = " ".join(words)
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


class _Builder:
    def __init__(self, spec: SynthSpec) -> None:
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.domains = DOMAIN_BANK[: spec.n_domains]
        # relation i -> (domain i % n_domains, slot i // n_domains)
        self.rel_domain = {}
        self.rel_slot = {}
        self.slot_rel: dict[tuple[int, int], str] = {}
        for i in range(spec.n_relations):
            rid = f"P{i + 1}"
            d, s = i % spec.n_domains, i // spec.n_domains
            self.rel_domain[rid] = d
            self.rel_slot[rid] = s
            self.slot_rel[(d, s)] = rid
        self.n_slots = math.ceil(spec.n_relations / spec.n_domains)

    def build_graph(self) -> tuple[list[tuple[str, str, str]], dict[str, str]]:
        spec, rng = self.spec, self.rng
        ents = [f"Q{i + 1}" for i in range(spec.n_entities)]
        labels = dict(zip(ents, _entity_names(spec.n_entities, rng)))
        for rid, d in self.rel_domain.items():
            labels[rid] = f"{self.domains[d].canonical} {SLOT_BANK[self.rel_slot[rid]].relation_noun}"
        triples = []
        for ei, e in enumerate(ents):
            k = min(spec.slots_per_entity, self.n_slots)
            for s in sorted(rng.choice(self.n_slots, size=k, replace=False).tolist()):
                owners = [d for d in range(spec.n_domains) if (d, s) in self.slot_rel]
                m = min(spec.domains_per_slot, len(owners))
                for d in sorted(rng.choice(owners, size=m, replace=False).tolist()):
                    rid = self.slot_rel[(d, s)]
                    if SLOT_BANK[s].literal:
                        tail = f'"{int(rng.integers(1900, 2021))}"'
                    else:
                        j = int(rng.integers(spec.n_entities - 1))
                        tail = ents[j if j < ei else j + 1]
                    triples.append((e, rid, tail))
        return triples, labels

    def walk(self, graph: KnowledgeGraph, start: str, domain: int) -> list[tuple[str, str]] | None:
        spec, rng = self.spec, self.rng
        limit = min(spec.max_hops, 3)
        weights = np.array(spec.hop_weights[:limit], dtype=float)
        length = int(rng.choice(np.arange(1, limit + 1), p=weights / weights.sum()))
        hops: list[tuple[str, str]] = []
        visited = {start}
        node = start
        while len(hops) < length:
            options = [
                (r, t) for r, t in graph.out_edges(node) if self.rel_domain[r] == domain and t not in visited
            ]
            if not options:
                break
            r, t = options[int(rng.integers(len(options)))]
            hops.append((r, t))
            visited.add(t)
            if is_literal(t):
                break
            node = t
        return hops or None

    def chain(self, hops: list[tuple[str, str]]) -> str:
        nouns = [SLOT_BANK[self.rel_slot[r]].question_noun for r, _ in reversed(hops)]
        return " of the ".join(nouns)

    def conversations(self, graph: KnowledgeGraph) -> list[Conversation]:
        spec, rng = self.spec, self.rng
        has_domain_edge = {
            d: sorted(e for e in graph.entities if any(self.rel_domain[r] == d for r, _ in graph.out_edges(e)))
            for d in range(spec.n_domains)
        }
        pool_sets = {d: set(v) for d, v in has_domain_edge.items()}
        convs = []
        for ci in range(spec.n_conversations):
            d = ci % spec.n_domains
            dom = self.domains[d]
            pool = has_domain_edge[d]
            turns: list[Turn] = []
            topic = None
            while not turns:
                topic = pool[int(rng.integers(len(pool)))]
                hops = self.walk(graph, topic, d)
                if hops is None:
                    continue
                ans = hops[-1][1]
                tpl = FIRST_QUESTION_TEMPLATES[int(rng.integers(len(FIRST_QUESTION_TEMPLATES)))]
                syn = dom.synonyms[int(rng.integers(len(dom.synonyms)))]
                ref = graph.label(topic)
                chain = self.chain(hops)
                turns.append(
                    Turn(
                        question=tpl.format(chain=chain, syn=syn, ref=ref),
                        answers=[ans],
                        answer_labels=[graph.label(ans)],
                        fluent_response=FIRST_RESPONSE_TEMPLATE.format(
                            chain=chain, canon=dom.canonical, ref=ref, ans=graph.label(ans)
                        ),
                        context_entities=[topic],
                    )
                )
            prev_answer = turns[0].answers[0]
            asked = {(topic, tuple(hops))}
            attempts = 0
            while len(turns) < spec.turns_per_conversation:
                attempts += 1
                use_prev = (
                    not is_literal(prev_answer)
                    and prev_answer in pool_sets[d]
                    and rng.random() < 0.5
                )
                anchor = prev_answer if use_prev else topic
                hops = self.walk(graph, anchor, d)
                repeated = hops is not None and (anchor, tuple(hops)) in asked
                if hops is None or (repeated and attempts <= 20):
                    if attempts > 50:
                        raise InfeasibleSpec("could not extend a conversation; graph too sparse")
                    continue
                asked.add((anchor, tuple(hops)))
                ans = hops[-1][1]
                chain = self.chain(hops)
                tpl = FOLLOWUP_QUESTION_TEMPLATES[int(rng.integers(len(FOLLOWUP_QUESTION_TEMPLATES)))]
                pron = "that one" if use_prev else "it"
                turns.append(
                    Turn(
                        question=tpl.format(chain=chain, pron=pron),
                        answers=[ans],
                        answer_labels=[graph.label(ans)],
                        fluent_response=FOLLOWUP_RESPONSE_TEMPLATE.format(chain=chain, ans=graph.label(ans)),
                        context_entities=[anchor],
                    )
                )
                prev_answer = ans
            convs.append(Conversation(id=f"conv{ci:05d}", domain=dom.name, turns=turns))
        return convs

    def corrupt(self, graph: KnowledgeGraph, convs: list[Conversation]) -> int:
        """Re-anchor a fixed fraction of turns on entities that cannot reach the answer."""
        spec, rng = self.spec, self.rng
        slots = [(ci, ti) for ci, c in enumerate(convs) for ti in range(len(c.turns))]
        n_bad = int(round(spec.corruption_rate * len(slots)))
        if n_bad == 0:
            return 0
        chosen = rng.choice(len(slots), size=n_bad, replace=False)
        ents = sorted(graph.entities)
        for k in sorted(chosen.tolist()):
            ci, ti = slots[k]
            turn = convs[ci].turns[ti]
            gold = set(turn.answers)
            for _ in range(200):
                cand = ents[int(rng.integers(len(ents)))]
                paths = extract_context_paths(graph, [cand], spec.max_hops)
                if cand not in gold and paths and not any(p.endpoint in gold for p in paths):
                    turn.context_entities = [cand]
                    break
            else:
                raise InfeasibleSpec("could not find an entity that misses the gold answer")
        return n_bad


def generate_synthetic_benchmark(spec: SynthSpec, out_dir: str | Path) -> SynthOutput:
    """Write ``triples.tsv``, ``labels.tsv``, ``conversations.jsonl``, ``domains.txt``."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    builder = _Builder(spec)
    triples, labels = builder.build_graph()
    graph = KnowledgeGraph(triples, labels, labels)
    convs = builder.conversations(graph)
    builder.corrupt(graph, convs)

    for c in convs:
        for t in c.turns:
            pos, neg = label_paths(extract_context_paths(graph, t.context_entities, spec.max_hops), t.answers)
            t.positives, t.negatives = pos, neg

    files = SynthOutput(
        triples_file=out / "triples.tsv",
        labels_file=out / "labels.tsv",
        conversations_file=out / "conversations.jsonl",
        domains_file=out / "domains.txt",
        spec_file=out / "synth_spec.json",
    )
    with open(files.triples_file, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{h}\t{r}\t{t}\n")
    with open(files.labels_file, "w", encoding="utf-8") as fh:
        for k in sorted(labels, key=lambda x: (x[0], int(x[1:]))):
            fh.write(f"{k}\t{labels[k]}\n")
    write_conversations(convs, files.conversations_file)
    files.domains_file.write_text("".join(d.name + "\n" for d in builder.domains), encoding="utf-8")
    files.spec_file.write_text(json.dumps(asdict(spec), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return files
