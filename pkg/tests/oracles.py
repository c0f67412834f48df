"""Independent brute-force references for the equivalence tests.

Written without importing the package's implementations so that a shared
bug cannot make both sides agree.
"""

from __future__ import annotations

import itertools
import math
from collections import deque


def bfs_paths(triples, anchors, max_hops):
    """Breadth-first enumeration of simple forward paths over a raw triple list."""
    out = set()
    for a in set(anchors):
        queue = deque([(a, (), (a,))])
        while queue:
            node, hops, seen = queue.popleft()
            if len(hops) == max_hops:
                continue
            if hops and node.startswith('"') and node.endswith('"'):
                continue
            for h, r, t in triples:
                if h != node or t in seen:
                    continue
                new = hops + ((r, t),)
                out.add((a, new))
                queue.append((t, new, seen + (t,)))
    return out


def rr(ranked, gold):
    ranks = [i + 1 for i, a in enumerate(ranked) if a in gold]
    return 1.0 / min(ranks) if ranks else 0.0


def hits(ranked, gold, k):
    return int(len(set(ranked[:k]) & set(gold)) > 0)


def bleu4_ref(cand, ref):
    if not cand or not ref:
        return 0.0
    logs = []
    for n in (1, 2, 3, 4):
        c_grams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
        r_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
        clipped = 0
        for g in set(c_grams):
            clipped += min(c_grams.count(g), r_grams.count(g))
        if n == 1:
            if clipped == 0:
                return 0.0
            logs.append(math.log(clipped / len(c_grams)))
        else:
            logs.append(math.log((clipped + 1) / (len(c_grams) + 1)))
    bp = math.exp(min(0.0, 1 - len(ref) / len(cand)))
    return bp * math.exp(sum(logs) / 4)


def meteor_ref(cand, ref):
    """Enumerate every injective exact alignment; keep maximum size, then fewest chunks."""
    if not cand or not ref:
        return 0.0
    options = [[None] + [j for j, r in enumerate(ref) if r == c] for c in cand]
    best_m, best_chunks = 0, None
    for choice in itertools.product(*options):
        used = [j for j in choice if j is not None]
        if len(used) != len(set(used)):
            continue
        m = len(used)
        if m == 0:
            continue
        chunks = 0
        prev = None
        for j in choice:
            if j is not None and not (prev is not None and j == prev + 1):
                chunks += 1
            prev = j
        if m > best_m or (m == best_m and chunks < best_chunks):
            best_m, best_chunks = m, chunks
    if best_m == 0:
        return 0.0
    p, r = best_m / len(cand), best_m / len(ref)
    f = 10 * p * r / (r + 9 * p)
    return f * (1 - 0.5 * (best_chunks / best_m) ** 3)
