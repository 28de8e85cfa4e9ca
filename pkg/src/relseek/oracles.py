"""Independent brute-force oracles the fast paths are checked against.

These deliberately avoid the frontier machinery: path enumeration walks a
plain adjacency dict built from the raw edge list, and the exhaustive
search scores every playable sequence instead of keeping a beam.
"""

from __future__ import annotations

import math
import zlib
from typing import Sequence

import numpy as np

from .coalesce import EntitySet, RelationSeq, reach_step
from .kg import SELF_ID, KnowledgeGraph
from .scorer import ScoreRequest, check_distribution


def label_path_reach(
    g: KnowledgeGraph, anchors: EntitySet, max_len: int
) -> dict[RelationSeq, frozenset[int]]:
    """Endpoint sets of every node-level path from the anchors, grouped by
    the path's relation-label sequence (leading self included).

    Enumerate every path explicitly; no frontier folding.  Exponential in
    max_len, fine for small graphs only.
    """
    src, rel, dst = g.edge_arrays()
    adj: dict[int, list[tuple[int, int]]] = {}
    for s, r, o in zip(src, rel, dst):
        adj.setdefault(int(s), []).append((int(r), int(o)))

    endpoints: dict[RelationSeq, set[int]] = {(SELF_ID,): set(map(int, anchors))}

    def walk(node: int, labels: RelationSeq) -> None:
        if len(labels) - 1 == max_len:
            return
        for r, o in adj.get(node, ()):
            seq = labels + (r,)
            endpoints.setdefault(seq, set()).add(o)
            walk(o, seq)

    for a in anchors:
        walk(int(a), (SELF_ID,))
    return {seq: frozenset(nodes) for seq, nodes in endpoints.items()}


def exhaustive_seek(
    g: KnowledgeGraph,
    anchors: EntitySet,
    scorer,
    *,
    question: Sequence[str] = (),
    max_steps: int = 2,
    top_k: int = 1,
) -> list[tuple[RelationSeq, float]]:
    """Score every playable sequence and return the top_k by (nll, seq).

    A sequence either terminates by choosing self at some step after the
    first, or runs unterminated for exactly max_steps relations.
    """
    question = tuple(question)
    results: list[tuple[RelationSeq, float]] = []

    def expand(frontier: EntitySet, seq: RelationSeq, nll: float, t: int) -> None:
        options = [int(r) for r in g.outgoing_relations(frontier)]
        if t > 1:
            options = [SELF_ID] + options
        if not options:
            return
        probs = check_distribution(
            scorer.score(ScoreRequest(question, seq, tuple(options))), len(options)
        )
        for r, p in zip(options, probs):
            if p <= 0.0:
                continue
            nll2 = nll - math.log(p)
            seq2 = seq + (r,)
            if r == SELF_ID:
                results.append((seq2, nll2))
            elif t == max_steps:
                results.append((seq2, nll2))
            else:
                expand(reach_step(g, frontier, r), seq2, nll2, t + 1)

    expand(anchors, (SELF_ID,), 0.0, 1)
    results.sort(key=lambda pair: (pair[1], pair[0]))
    return results[:top_k]


class HashScorer:
    """Deterministic pseudo-random distributions, keyed on the request.

    Useful for exercising beam pruning against exhaustive search with
    nontrivial, reproducible probabilities.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def score(self, req: ScoreRequest) -> np.ndarray:
        key = repr((self.seed, req.question, req.prefix, req.options))
        rng = np.random.default_rng(zlib.crc32(key.encode("utf-8")))
        w = rng.random(len(req.options)) + 0.1
        return w / w.sum()


def smallest_superset_sequences(
    g: KnowledgeGraph, anchors: EntitySet, answers: EntitySet, max_len: int
) -> set[RelationSeq]:
    """Brute-force version of the weak-label rule, driven by raw path
    enumeration rather than frontier folding."""
    by_seq = label_path_reach(g, anchors, max_len)
    answer_set = frozenset(map(int, answers))
    covering = {
        seq: nodes for seq, nodes in by_seq.items() if answer_set <= nodes
    }
    if not covering:
        return set()
    smallest = min(len(nodes) for nodes in covering.values())
    return {seq for seq, nodes in covering.items() if len(nodes) == smallest}
