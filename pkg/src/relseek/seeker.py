"""Beam search over relation sequences ("knowledge seeking").

The beam holds (frontier, sequence, accumulated negative log-likelihood)
entries.  Each step expands every live entry along the valid outgoing
relations of its frontier plus, after the first step, a terminal self
option that freezes the sequence.  Expansion probabilities come from a
pluggable scorer and are validated against the distribution contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coalesce import EntitySet, RelationSeq, reach_step
from .kg import SELF_ID, KnowledgeGraph
from .scorer import ScoreRequest, check_distribution


@dataclass(frozen=True)
class BeamEntry:
    frontier: EntitySet
    seq: RelationSeq
    nll: float


@dataclass(frozen=True)
class SeekResult:
    entries: tuple[BeamEntry, ...]
    candidates: EntitySet
    scorer_calls: int
    visited: EntitySet


def _is_frozen(seq: RelationSeq) -> bool:
    return len(seq) > 1 and seq[-1] == SELF_ID


def seek(
    g: KnowledgeGraph,
    anchors: EntitySet,
    scorer,
    *,
    question: Sequence[str] = (),
    beam_width: int = 10,
    max_steps: int = 2,
    top_k: int = 1,
) -> SeekResult:
    """Return the top_k lowest-nll relation sequences from the anchors.

    The beam starts as {(anchors, (self,), 0)}.  Frozen entries (terminal
    self already chosen) are carried unchanged.  Others are expanded along
    every outgoing relation of their frontier, plus the terminal self at
    steps after the first; each expansion adds -log p to the entry's nll.
    The beam is pruned to beam_width by (nll, sequence) and the loop stops
    when the beam no longer changes or max_steps expansions have run.
    Ties are broken lexicographically by sequence, so identical inputs
    always produce identical results.
    """
    if len(anchors) == 0:
        raise ValueError("anchors must be nonempty")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if not 1 <= top_k <= beam_width:
        raise ValueError("need 1 <= top_k <= beam_width")
    question = tuple(question)

    beam: list[BeamEntry] = [BeamEntry(anchors, (SELF_ID,), 0.0)]
    scorer_calls = 0
    t = 1
    while True:
        nxt: list[BeamEntry] = []
        for entry in beam:
            if _is_frozen(entry.seq):
                nxt.append(entry)
                continue
            options = [int(r) for r in g.outgoing_relations(entry.frontier)]
            if t > 1:
                options = [SELF_ID] + options
            if not options:
                continue  # dead end at the first step: no expansion survives
            probs = check_distribution(
                scorer.score(ScoreRequest(question, entry.seq, tuple(options))),
                len(options),
            )
            scorer_calls += len(options)
            for r, p in zip(options, probs):
                if p <= 0.0:
                    continue  # zero-probability expansions would have infinite nll
                nll = entry.nll - math.log(p)
                if r == SELF_ID:
                    nxt.append(BeamEntry(entry.frontier, entry.seq + (SELF_ID,), nll))
                else:
                    nxt.append(
                        BeamEntry(reach_step(g, entry.frontier, r), entry.seq + (r,), nll)
                    )
        nxt.sort(key=lambda e: (e.nll, e.seq))
        nxt = nxt[:beam_width]
        t += 1
        unchanged = [e.seq for e in nxt] == [e.seq for e in beam]
        beam = nxt
        if unchanged or t > max_steps:
            break

    entries = tuple(beam[:top_k])
    if entries:
        candidates = entries[0].frontier.union(*(e.frontier for e in entries[1:]))
    else:
        candidates = EntitySet.empty()
    visited = _visited_frontiers(g, anchors, entries)

    bound = max_steps * beam_width * g.num_relations
    if scorer_calls > bound:
        raise AssertionError(
            f"scorer_calls {scorer_calls} exceeded bound {bound}"
        )
    return SeekResult(
        entries=entries,
        candidates=candidates,
        scorer_calls=scorer_calls,
        visited=visited,
    )


def _visited_frontiers(
    g: KnowledgeGraph, anchors: EntitySet, entries: Sequence[BeamEntry]
) -> EntitySet:
    """Union of every frontier along each retained sequence, anchors included."""
    visited = anchors if entries else EntitySet.empty()
    for entry in entries:
        frontier = anchors
        for r in entry.seq[1:]:
            if r == SELF_ID:
                continue
            frontier = reach_step(g, frontier, r)
            visited = visited.union(frontier)
    return visited


def candidate_subgraph(g: KnowledgeGraph, result: SeekResult) -> KnowledgeGraph:
    """Induced subgraph over the visited nodes plus their one-hop
    out-neighbors (inverse relations, when loaded, make that cover
    in-neighbors as well)."""
    visited = result.visited
    if len(visited) and int(visited.ids.max()) >= g.num_entities:
        raise ValueError("seek result does not belong to this graph")
    neighbors = g.all_out_neighbors(visited.ids)
    nodes = np.union1d(visited.ids, neighbors)
    return g.induced_subgraph(nodes)
