"""Ranking, classification and generation metrics."""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Sequence


def _first_hit(ranked: Sequence[Hashable], gold: set) -> int | None:
    for i, a in enumerate(ranked, start=1):
        if a in gold:
            return i
    return None


def reciprocal_rank(ranked: Sequence[Hashable], gold) -> float:
    r = _first_hit(ranked, set(gold))
    return 0.0 if r is None else 1.0 / r


def hits_at_k(ranked: Sequence[Hashable], gold, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    r = _first_hit(ranked, set(gold))
    return int(r is not None and r <= k)


def precision_at_1(ranked: Sequence[Hashable], gold) -> int:
    return int(bool(ranked) and ranked[0] in set(gold))


def domain_prf(predictions: Sequence[Hashable], golds: Sequence[Hashable], labels: Sequence[Hashable] | None = None):
    """Per-class and macro-averaged precision/recall/F1.

    Classes default to the sorted union of gold and predicted labels; an
    undefined ratio (0/0) counts as 0.  Macro F1 is the mean of per-class F1.
    """
    if len(predictions) != len(golds):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise ValueError("domain_prf needs at least one example")
    classes = list(labels) if labels is not None else sorted(set(golds) | set(predictions), key=str)
    per_class = {}
    for c in classes:
        tp = sum(1 for p, g in zip(predictions, golds) if p == c and g == c)
        fp = sum(1 for p, g in zip(predictions, golds) if p == c and g != c)
        fn = sum(1 for p, g in zip(predictions, golds) if p != c and g == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class[c] = {"precision": prec, "recall": rec, "f1": f1, "support": tp + fn}
    n = len(classes)
    return {
        "precision": sum(v["precision"] for v in per_class.values()) / n,
        "recall": sum(v["recall"] for v in per_class.values()) / n,
        "f1": sum(v["f1"] for v in per_class.values()) / n,
        "per_class": per_class,
    }


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Sentence BLEU-4 with brevity penalty; n>=2 precisions use add-one smoothing."""
    if not candidate or not reference:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
        matched = sum(min(c, ref[g]) for g, c in cand.items())
        total = max(len(candidate) - n + 1, 0)
        if n == 1:
            if matched == 0:
                return 0.0
            p = matched / total
        else:
            p = (matched + 1) / (total + 1)
        log_sum += math.log(p)
    c, r = len(candidate), len(reference)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / 4)


def _min_chunks(candidate: Sequence[str], reference: Sequence[str]) -> tuple[int, int]:
    """(matches, chunks) for the maximum-size exact alignment with fewest chunks.

    Every candidate token of a type that occurs no more often in the
    candidate than in the reference must be matched; for other types exactly
    ``count_ref`` occurrences are.  A memoised search picks reference
    positions so that the number of contiguous runs is minimal.
    """
    ref_pos: dict[str, list[int]] = {}
    for j, t in enumerate(reference):
        ref_pos.setdefault(t, []).append(j)
    cand_count = Counter(candidate)
    quota = {t: min(c, len(ref_pos.get(t, ()))) for t, c in cand_count.items()}
    m = sum(quota.values())
    if m == 0:
        return 0, 0
    remaining_after = []
    seen = Counter()
    for t in candidate:
        seen[t] += 1
        remaining_after.append(cand_count[t] - seen[t])

    memo: dict = {}

    def best(i: int, used: frozenset, last: int, taken: tuple) -> float:
        # last: reference index matched by candidate token i-1, or -2 if i-1 unmatched
        if i == len(candidate):
            return 0 if all(taken_q == quota[t] for t, taken_q in taken) else math.inf
        key = (i, used, last, taken)
        if key in memo:
            return memo[key]
        t = candidate[i]
        tk = dict(taken)
        got = tk.get(t, 0)
        need = quota.get(t, 0) - got
        res = math.inf
        if need > 0:
            for j in ref_pos[t]:
                if j in used:
                    continue
                tk2 = dict(tk)
                tk2[t] = got + 1
                cost = 0 if j == last + 1 and last >= 0 else 1
                res = min(res, cost + best(i + 1, used | {j}, j, tuple(sorted(tk2.items()))))
        if need <= remaining_after[i]:
            res = min(res, best(i + 1, used, -2, taken))
        memo[key] = res
        return res

    chunks = best(0, frozenset(), -2, tuple(sorted((t, 0) for t in quota)))
    return m, int(chunks)


def meteor_simplified(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Exact-match METEOR: F_mean = 10PR/(R+9P), penalty = 0.5 (chunks/m)^3."""
    if not candidate or not reference:
        return 0.0
    m, chunks = _min_chunks(candidate, reference)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1 - penalty)
