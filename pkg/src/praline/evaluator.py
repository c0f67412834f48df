"""Inference over held-out conversations and the metric report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .corpus import Conversation, Tokenizer, assemble_input, bare_answer_text
from .kg import ContextPath, KnowledgeGraph, extract_context_paths, verbalize_path
from .metrics import bleu4, domain_prf, hits_at_k, meteor_simplified, precision_at_1, reciprocal_rank
from .model import pad_batch
from .pointer import DomainVocabulary
from .ranker import RankedCandidates, cosine_torch, rank_by_scores
from .seq2seq import substitute_answer
from .text import split_tokens

RANKING_KEYS = ("p_at_1", "h_at_5", "h_at_10", "mrr")
METEOR_NOTE = "METEOR here is exact-match only (no stemming or synonym modules)."
NO_ANSWER = "unknown"

# scorer(conversation, turn_index, candidate paths) -> scores; replaces the towers
Scorer = Callable[[Conversation, int, Sequence[ContextPath]], Sequence[float]]


@dataclass
class EvalOptions:
    history_mode: str = "full"
    response_mode: str = "fluent"
    use_domain: bool = True
    use_gold_domain: bool = False
    gold_history: bool = False
    max_hops: int = 3
    include_inverse: bool = False
    baseline_seed: int = 0
    batch_size: int = 64


@dataclass
class TurnResult:
    turn_id: str
    domain: str
    ranked_answers: list[str]
    gold_answers: list[str]
    predicted_domain: int
    gold_domain: int
    generated_response: str
    gold_response: str
    had_gold_paths: bool
    n_candidates: int
    scores: dict = field(default_factory=dict)
    ranking: RankedCandidates | None = None


@dataclass
class EvalReport:
    n_turns: int
    overall: dict
    per_domain: dict
    domain_identification: dict | None
    generation: dict
    missing_gold: dict
    random_baseline: dict
    notes: list[str]

    def to_json(self) -> dict:
        return {
            "n_turns": self.n_turns,
            "overall": self.overall,
            "per_domain": self.per_domain,
            "domain_identification": self.domain_identification,
            "generation": self.generation,
            "missing_gold": self.missing_gold,
            "random_baseline": self.random_baseline,
            "notes": self.notes,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        header = f"{'domain':<14}{'turns':>7}{'P@1':>8}{'H@5':>8}{'H@10':>8}{'MRR':>8}"
        lines = ["# " + METEOR_NOTE, header, "-" * len(header)]
        rows = list(self.per_domain.items()) + [("overall", self.overall)]
        for name, m in rows:
            lines.append(
                f"{name:<14}{m['n_turns']:>7}{m['p_at_1']:>8.3f}{m['h_at_5']:>8.3f}"
                f"{m['h_at_10']:>8.3f}{m['mrr']:>8.3f}"
            )
        lines.append("")
        rb = self.random_baseline
        lines.append(f"random ranking baseline: MRR {rb['mrr']:.3f}  H@5 {rb['h_at_5']:.3f}"
                     f"  (avg {rb['avg_candidates']:.1f} candidate answers)")
        lines.append(f"turns without gold-reachable paths: {self.missing_gold['count']}"
                     f" ({self.missing_gold['fraction']:.3f}), scored as wrong")
        if self.domain_identification is not None:
            di = self.domain_identification
            lines.append(f"domain pointer: P {di['precision']:.3f}  R {di['recall']:.3f}  F1 {di['f1']:.3f}")
        g = self.generation
        lines.append(f"response generation: BLEU-4 {g['bleu4']:.3f}  METEOR {g['meteor']:.3f}")
        return "\n".join(lines) + "\n"


def turn_metrics(ranked: Sequence[str], gold: Sequence[str]) -> dict:
    return {
        "p_at_1": float(precision_at_1(ranked, gold)),
        "h_at_5": float(hits_at_k(ranked, gold, 5)),
        "h_at_10": float(hits_at_k(ranked, gold, 10)),
        "mrr": reciprocal_rank(ranked, gold),
    }


def aggregate(results: Sequence[TurnResult]) -> dict:
    n = len(results)
    out = {"n_turns": n}
    for k in RANKING_KEYS:
        total = 0.0
        for r in results:
            total += r.scores[k]
        out[k] = total / n if n else 0.0
    return out


class _PathEmbeddings:
    def __init__(self, graph: KnowledgeGraph, embedder, max_hops: int, include_inverse: bool):
        self.graph, self.embedder = graph, embedder
        self.max_hops, self.include_inverse = max_hops, include_inverse
        self._paths: dict[tuple, list[ContextPath]] = {}
        self._mats: dict[tuple, np.ndarray] = {}

    def candidates(self, context_entities: Sequence[str]) -> tuple[list[ContextPath], np.ndarray]:
        key = tuple(sorted(set(context_entities)))
        if key not in self._paths:
            known = [e for e in key if e in self.graph.entities]
            paths = extract_context_paths(self.graph, known, self.max_hops, self.include_inverse) if known else []
            self._paths[key] = paths
            self._mats[key] = self.embedder.embed_paths([verbalize_path(p, self.graph) for p in paths])
        return self._paths[key], self._mats[key]


@torch.no_grad()
def evaluate(
    model,
    conversations: Sequence[Conversation],
    graph: KnowledgeGraph,
    embedder,
    tokenizer: Tokenizer,
    domains: DomainVocabulary,
    options: EvalOptions | None = None,
    scorer: Scorer | None = None,
    keep_rankings: bool = False,
) -> tuple[EvalReport, list[TurnResult]]:
    """Run inference turn by turn and score every turn.

    Each conversation's history is built from the model's own outputs
    (generated fluent responses, or predicted answer labels in bare-answer
    mode) unless ``options.gold_history`` is set.
    """
    opt = options or EvalOptions()
    if model is None and scorer is None:
        raise ValueError("evaluate needs a model or a scorer")
    was_training = model.training if model is not None else False
    if model is not None:
        model.eval()
    dtype = torch.float64
    dom_emb = torch.as_tensor(domains.embeddings, dtype=dtype)
    path_cache = _PathEmbeddings(graph, embedder, opt.max_hops, opt.include_inverse)
    rng = np.random.default_rng(opt.baseline_seed)

    histories: list[list[tuple[str, str]]] = [[] for _ in conversations]
    results: list[list[TurnResult]] = [[] for _ in conversations]
    baseline: list[dict] = []
    max_turns = max((len(c.turns) for c in conversations), default=0)

    for t in range(max_turns):
        active = [i for i, c in enumerate(conversations) if len(c.turns) > t]
        for start in range(0, len(active), opt.batch_size):
            chunk = active[start:start + opt.batch_size]
            seqs = [
                assemble_input(histories[i], conversations[i].turns[t].question, tokenizer, opt.history_mode)
                for i in chunk
            ]
            pred_dom = [0] * len(chunk)
            phi_c = None
            enc = None
            if model is not None:
                ids, mask = pad_batch([s or [tokenizer.unk_id] for s in seqs], tokenizer.pad_id)
                enc = model.encode_batch(ids, mask)
                logp = model.domain_logprobs(enc, dom_emb)
                pred_dom = [int(x) for x in logp.argmax(dim=-1)]
                gold_dom = [domains.index(conversations[i].domain) for i in chunk]
                if not opt.use_domain:
                    dvec = torch.zeros(len(chunk), dom_emb.shape[1], dtype=dtype)
                elif opt.use_gold_domain:
                    dvec = dom_emb[torch.as_tensor(gold_dom)]
                else:
                    dvec = dom_emb[torch.as_tensor(pred_dom)]
                phi_c = model.conversation_embedding(enc, dvec)

            rankings: list[RankedCandidates] = []
            for b, i in enumerate(chunk):
                conv = conversations[i]
                turn = conv.turns[t]
                paths, mat = path_cache.candidates(turn.context_entities)
                if not paths:
                    rankings.append(RankedCandidates(()))
                    continue
                if scorer is not None:
                    scores = [float(s) for s in scorer(conv, t, paths)]
                else:
                    phi_p = model.path_embedding(torch.as_tensor(mat, dtype=dtype))
                    scores = cosine_torch(phi_c[b][None, :], phi_p).tolist()
                rankings.append(rank_by_scores(paths, scores))

            generated: list[list[str]] = [[] for _ in chunk]
            if model is not None:
                gen_ids = model.generate(enc, tokenizer.bos_id, tokenizer.eos_id, 50)
                generated = [tokenizer.decode_tokens(g) for g in gen_ids]

            for b, i in enumerate(chunk):
                conv = conversations[i]
                turn = conv.turns[t]
                ranking = rankings[b]
                answers = [a for a, _ in ranking.answers()]
                gold = list(turn.answers)
                had_gold = any(a in set(gold) for a in answers)
                scores = turn_metrics(answers, gold) if had_gold else {k: 0.0 for k in RANKING_KEYS}
                top_label = graph.label(answers[0]) if answers else NO_ANSWER
                response = substitute_answer(generated[b], top_label) if model is not None else top_label
                cand_toks = split_tokens(response)
                ref_toks = split_tokens(turn.fluent_response)
                scores["bleu4"] = bleu4(cand_toks, ref_toks)
                scores["meteor"] = meteor_simplified(cand_toks, ref_toks)

                canonical = sorted(ranking.paths, key=lambda p: p.sort_key)
                perm = rng.permutation(len(canonical)) if canonical else []
                shuffled = []
                seen = set()
                for j in perm:
                    e = canonical[int(j)].endpoint
                    if e not in seen:
                        seen.add(e)
                        shuffled.append(e)
                baseline.append({**turn_metrics(shuffled, gold), "n": len(answers)})

                results[i].append(
                    TurnResult(
                        turn_id=f"{conv.id}#{t}",
                        domain=conv.domain,
                        ranked_answers=answers,
                        gold_answers=gold,
                        predicted_domain=pred_dom[b],
                        gold_domain=domains.index(conv.domain) if conv.domain in domains.labels else -1,
                        generated_response=response,
                        gold_response=turn.fluent_response,
                        had_gold_paths=had_gold,
                        n_candidates=len(answers),
                        scores=scores,
                        ranking=ranking if keep_rankings else None,
                    )
                )
                if opt.gold_history:
                    r = turn.fluent_response if opt.response_mode == "fluent" else bare_answer_text(turn.answer_labels)
                elif opt.response_mode == "fluent":
                    r = response
                else:
                    r = top_label
                histories[i].append((turn.question, r))

    if model is not None and was_training:
        model.train()
    flat = [r for conv_results in results for r in conv_results]
    report = build_report(flat, domains, baseline, with_domain=model is not None and opt.use_domain)
    return report, flat


def build_report(
    flat: Sequence[TurnResult], domains: DomainVocabulary, baseline: Sequence[dict], with_domain: bool
) -> EvalReport:
    n = len(flat)
    per_domain = {}
    for label in domains.labels:
        rows = [r for r in flat if r.domain == label]
        if rows:
            per_domain[label] = aggregate(rows)
    missing = sum(1 for r in flat if not r.had_gold_paths)
    dom_id = None
    if with_domain and flat:
        prf = domain_prf([r.predicted_domain for r in flat], [r.gold_domain for r in flat],
                         labels=list(range(len(domains))))
        dom_id = {
            "precision": prf["precision"],
            "recall": prf["recall"],
            "f1": prf["f1"],
            "per_class": {domains.labels[c]: v for c, v in prf["per_class"].items()},
        }
    gen = {
        "bleu4": sum(r.scores["bleu4"] for r in flat) / n if n else 0.0,
        "meteor": sum(r.scores["meteor"] for r in flat) / n if n else 0.0,
    }
    rb = {k: (sum(b[k] for b in baseline) / len(baseline) if baseline else 0.0) for k in RANKING_KEYS}
    rb["avg_candidates"] = sum(b["n"] for b in baseline) / len(baseline) if baseline else 0.0
    return EvalReport(
        n_turns=n,
        overall=aggregate(flat),
        per_domain=per_domain,
        domain_identification=dom_id,
        generation=gen,
        missing_gold={"count": missing, "fraction": missing / n if n else 0.0},
        random_baseline=rb,
        notes=[
            METEOR_NOTE,
            "Ranking metrics are computed over answers (deduplicated path endpoints).",
            "Turns whose candidate paths cannot reach a gold answer count as wrong.",
        ],
    )


def oracle_scorer(conv: Conversation, t: int, paths: Sequence[ContextPath]) -> list[float]:
    """Scores 1 for paths that end in a gold answer; a perfect ranker for diagnostics."""
    gold = set(conv.turns[t].answers)
    return [1.0 if p.endpoint in gold else 0.0 for p in paths]
