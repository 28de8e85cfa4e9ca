"""Synthetic knowledge bases, question generators, and the benchmark runner.

gen_synthetic builds the worst case for coalescing: every node has exactly
one outgoing edge per relation type, so outdegree equals the number of
relations and frontiers stay tiny.  Questions name their gold relations in
a fixed template so the featurized scorer has learnable signal.
gen_random_graph builds plain random multigraphs for property tests, and
gen_intersection_episodes builds refinement tasks where the candidate set
strictly contains the answers and only an extra marker edge tells them
apart.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coalesce import EntitySet, path_count_stats
from .kg import SELF_RELATION, KnowledgeGraph
from .refiner import RefineEpisode, RefinerModel, refine
from .scorer import QAExample
from .seeker import SeekResult, candidate_subgraph, seek


@dataclass(frozen=True)
class SynthSpec:
    n_entities: int
    n_relations: int
    seed: int
    answer_hops: int = 2
    n_examples: int = 100

    def __post_init__(self):
        if self.n_entities < self.n_relations + 1:
            raise ValueError("need n_entities >= n_relations + 1")
        if self.answer_hops < 1:
            raise ValueError("answer_hops must be >= 1")
        if self.n_examples < 0:
            raise ValueError("n_examples must be >= 0")


def gen_synthetic(spec: SynthSpec) -> tuple[KnowledgeGraph, list[QAExample]]:
    """Regular synthetic KB plus templated questions.

    Every node gets exactly one outgoing edge per relation, targets drawn
    uniformly at random.  Each example has one anchor and a single answer
    exactly answer_hops away along a designated gold sequence; the question
    names the gold relations outermost first:
    "what is <r_last> of ... of <r_first> of <entity>".
    """
    rng = np.random.default_rng(spec.seed)
    n, nr = spec.n_entities, spec.n_relations
    entity_names = [f"e{i}" for i in range(n)]
    relation_names = [SELF_RELATION] + [f"rel{i}" for i in range(nr)]
    targets = rng.integers(0, n, size=(n, nr), dtype=np.int64)
    src = np.repeat(np.arange(n, dtype=np.int64), nr)
    rel = np.tile(np.arange(1, nr + 1, dtype=np.int64), n)
    g = KnowledgeGraph(entity_names, relation_names, src, rel, targets.ravel())

    examples: list[QAExample] = []
    for _ in range(spec.n_examples):
        anchor = int(rng.integers(n))
        gold = [int(r) for r in rng.integers(1, nr + 1, size=spec.answer_hops)]
        node = anchor
        for r in gold:
            node = int(targets[node, r - 1])
        tokens = ["what", "is"]
        for r in reversed(gold):
            tokens += [relation_names[r], "of"]
        tokens.append(entity_names[anchor])
        examples.append(
            QAExample(
                question=tuple(tokens),
                anchors=EntitySet([anchor]),
                answers=EntitySet([node]),
                gold_sequences=((0, *gold),),
            )
        )
    return g, examples


def gen_random_graph(
    n_entities: int, n_edges: int, n_relations: int, seed: int
) -> KnowledgeGraph:
    """Uniform random multigraph (duplicates collapse at construction)."""
    rng = np.random.default_rng(seed)
    entity_names = [f"v{i}" for i in range(n_entities)]
    relation_names = [SELF_RELATION] + [f"rel{i}" for i in range(n_relations)]
    src = rng.integers(0, n_entities, size=n_edges, dtype=np.int64)
    rel = rng.integers(1, n_relations + 1, size=n_edges, dtype=np.int64)
    dst = rng.integers(0, n_entities, size=n_edges, dtype=np.int64)
    return KnowledgeGraph(entity_names, relation_names, src, rel, dst)


def gen_intersection_episodes(
    n_episodes: int, seed: int, n_distractors: int = 2
) -> list[RefineEpisode]:
    """Refinement tasks whose candidates strictly contain the answers.

    Each episode is its own small graph: anchor -> mid -> {candidates},
    with one candidate singled out by an extra "marker" edge from a
    property node.  Relation following alone cannot separate the answer
    from the distractors; the marker edge can.
    """
    rng = np.random.default_rng(seed)
    episodes: list[RefineEpisode] = []
    m = n_distractors + 1
    for _ in range(n_episodes):
        entity_names = ["a", "mid", "prop"] + [f"c{i}" for i in range(m)]
        relation_names = [SELF_RELATION, "hop1", "hop2", "marker"]
        a, mid, prop = 0, 1, 2
        cands = list(range(3, 3 + m))
        ans = int(rng.integers(m))
        src = [a] + [mid] * m + [prop]
        rel = [1] + [2] * m + [3]
        dst = [mid] + cands + [cands[ans]]
        g = KnowledgeGraph(entity_names, relation_names, src, rel, dst)
        question = ("which", "hop2", "of", "hop1", "of", "a", "has", "marker")
        episodes.append(
            RefineEpisode(
                subgraph=g,
                question=question,
                anchors=EntitySet([a]),
                candidates=EntitySet(cands),
                answers=EntitySet([cands[ans]]),
            )
        )
    return episodes


# ----------------------------------------------------------------------
# benchmark rows
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ThroughputRow:
    config: str
    queries_per_second: float
    scorer_calls_mean: float
    wall_time: float


@dataclass(frozen=True)
class PreprocRow:
    method: str
    example_index: int
    wall_time: float
    touched: int


@dataclass(frozen=True)
class PrecisionRecallRow:
    k: int
    precision: float
    recall: float


@dataclass(frozen=True)
class BenchReport:
    throughput: tuple[ThroughputRow, ...] = ()
    precision_recall: tuple[PrecisionRecallRow, ...] = ()


def _check_cost_bound(g: KnowledgeGraph, res: SeekResult, beam_width: int, max_steps: int):
    bound = max_steps * beam_width * g.num_relations
    if res.scorer_calls > bound:
        raise AssertionError(f"scorer_calls {res.scorer_calls} exceeded bound {bound}")


def bench_throughput(
    g: KnowledgeGraph,
    examples: Sequence[QAExample],
    scorer,
    beam_width: int,
    max_steps: int,
    top_k: int,
    warmup: int,
    iters: int,
) -> list[ThroughputRow]:
    """End-to-end seek throughput, one query at a time.

    Runs `warmup` unmeasured queries, then `iters` measured ones cycling
    through the examples; queries/sec is iters divided by total wall time.
    The per-iteration cost bound on scorer calls is asserted for every
    query.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not examples:
        raise ValueError("examples must be nonempty")

    def run(i: int) -> int:
        ex = examples[i % len(examples)]
        res = seek(
            g,
            ex.anchors,
            scorer,
            question=ex.question,
            beam_width=beam_width,
            max_steps=max_steps,
            top_k=top_k,
        )
        _check_cost_bound(g, res, beam_width, max_steps)
        return res.scorer_calls

    for i in range(warmup):
        run(i)
    calls = 0
    t0 = time.perf_counter()
    for i in range(iters):
        calls += run(i)
    wall = time.perf_counter() - t0
    wall = max(wall, 1e-9)
    config = (
        f"V={g.num_entities};R={g.num_relations - 1};beta={beam_width};"
        f"tau={max_steps};k={top_k}"
    )
    return [
        ThroughputRow(
            config=config,
            queries_per_second=iters / wall,
            scorer_calls_mean=calls / iters,
            wall_time=wall,
        )
    ]


def two_hop_nodes(g: KnowledgeGraph, anchors: EntitySet, hops: int = 2) -> EntitySet:
    """Full neighborhood extraction: every node within `hops` steps,
    following all relations."""
    seen = anchors
    frontier = anchors
    for _ in range(hops):
        nxt = np.unique(g.all_out_neighbors(frontier.ids))
        frontier = EntitySet(np.setdiff1d(nxt, seen.ids, assume_unique=True))
        if not frontier:
            break
        seen = seen.union(frontier)
    return seen


def bench_preprocessing(
    g: KnowledgeGraph, examples: Sequence[QAExample], hops: int = 2
) -> list[PreprocRow]:
    """Per-query cost of full neighborhood extraction versus the lazy
    frontier setup (just the valid relation options at the anchors).

    `touched` counts nodes for the extraction and relation options for the
    lazy setup, so the two columns expose the asymmetry directly."""
    rows: list[PreprocRow] = []
    for i, ex in enumerate(examples):
        t0 = time.perf_counter()
        nodes = two_hop_nodes(g, ex.anchors, hops)
        t1 = time.perf_counter()
        rows.append(
            PreprocRow(
                method=f"{hops}hop_extraction",
                example_index=i,
                wall_time=t1 - t0,
                touched=len(nodes),
            )
        )
        t0 = time.perf_counter()
        options = g.outgoing_relations(ex.anchors)
        t1 = time.perf_counter()
        rows.append(
            PreprocRow(
                method="lazy_frontier_setup",
                example_index=i,
                wall_time=t1 - t0,
                touched=int(options.size),
            )
        )
    return rows


def precision_recall_at_k(
    g: KnowledgeGraph,
    examples: Sequence[QAExample],
    scorer,
    beam_width: int,
    max_steps: int,
    k_max: int,
) -> list[PrecisionRecallRow]:
    """Precision/recall of the candidate union over the top k sequences,
    averaged over examples, for k = 1..k_max."""
    if k_max < 1 or k_max > beam_width:
        raise ValueError("need 1 <= k_max <= beam_width")
    if not examples:
        raise ValueError("examples must be nonempty")
    precision = np.zeros(k_max)
    recall = np.zeros(k_max)
    for ex in examples:
        res = seek(
            g,
            ex.anchors,
            scorer,
            question=ex.question,
            beam_width=beam_width,
            max_steps=max_steps,
            top_k=k_max,
        )
        union = EntitySet.empty()
        for k in range(1, k_max + 1):
            if k <= len(res.entries):
                union = union.union(res.entries[k - 1].frontier)
            hit = len(union.intersection(ex.answers))
            precision[k - 1] += hit / len(union) if len(union) else 0.0
            recall[k - 1] += hit / len(ex.answers)
    n = len(examples)
    return [
        PrecisionRecallRow(k=k + 1, precision=precision[k] / n, recall=recall[k] / n)
        for k in range(k_max)
    ]


# ----------------------------------------------------------------------
# evaluation helpers
# ----------------------------------------------------------------------


def expected_hits_at_1(
    g: KnowledgeGraph,
    examples: Sequence[QAExample],
    scorer,
    beam_width: int = 10,
    max_steps: int = 2,
    top_k: int = 1,
) -> float:
    """Unrefined Hits@1: the expected value of drawing the prediction
    uniformly at random from the candidate set, |answers & candidates| / |candidates|,
    averaged over examples."""
    if not examples:
        raise ValueError("examples must be nonempty")
    total = 0.0
    for ex in examples:
        res = seek(
            g,
            ex.anchors,
            scorer,
            question=ex.question,
            beam_width=beam_width,
            max_steps=max_steps,
            top_k=top_k,
        )
        if len(res.candidates):
            total += len(res.candidates.intersection(ex.answers)) / len(res.candidates)
    return total / len(examples)


def build_refine_episodes(
    g: KnowledgeGraph,
    examples: Sequence[QAExample],
    scorer,
    beam_width: int = 10,
    max_steps: int = 2,
    top_k: int = 1,
) -> list[RefineEpisode]:
    """Seek, extract the candidate subgraph, and re-express everything in
    subgraph-local ids."""
    episodes: list[RefineEpisode] = []
    for ex in examples:
        res = seek(
            g,
            ex.anchors,
            scorer,
            question=ex.question,
            beam_width=beam_width,
            max_steps=max_steps,
            top_k=top_k,
        )
        if not len(res.candidates):
            continue
        sub = candidate_subgraph(g, res)
        # answers outside the subgraph cannot be mapped; keep those inside
        local_answers = []
        for a in ex.answers:
            try:
                local_answers.append(int(sub.local_ids([a])[0]))
            except KeyError:
                continue
        episodes.append(
            RefineEpisode(
                subgraph=sub,
                question=ex.question,
                anchors=EntitySet(sub.local_ids(ex.anchors.ids)),
                candidates=EntitySet(sub.local_ids(res.candidates.ids)),
                answers=EntitySet(local_answers),
            )
        )
    return episodes


def refined_hits_at_1(
    g: KnowledgeGraph,
    examples: Sequence[QAExample],
    scorer,
    model: RefinerModel,
    beam_width: int = 10,
    max_steps: int = 2,
    top_k: int = 1,
) -> float:
    """Hits@1 when the refiner picks the top candidate on the subgraph."""
    if not examples:
        raise ValueError("examples must be nonempty")
    hits = 0
    for ex in examples:
        res = seek(
            g,
            ex.anchors,
            scorer,
            question=ex.question,
            beam_width=beam_width,
            max_steps=max_steps,
            top_k=top_k,
        )
        if not len(res.candidates):
            continue
        sub = candidate_subgraph(g, res)
        ranked = refine(
            model,
            sub,
            ex.question,
            EntitySet(sub.local_ids(ex.anchors.ids)),
            EntitySet(sub.local_ids(res.candidates.ids)),
        )
        top_local = ranked[0][0]
        orig = sub.orig_entity_ids
        top_orig = int(orig[top_local]) if orig is not None else top_local
        if top_orig in ex.answers:
            hits += 1
    return hits / len(examples)


def refined_hits_on_episodes(model: RefinerModel, episodes: Sequence[RefineEpisode]) -> float:
    """Hits@1 of the refiner on ready-made episodes (local ids)."""
    if not episodes:
        raise ValueError("episodes must be nonempty")
    hits = 0
    for ep in episodes:
        ranked = refine(model, ep.subgraph, ep.question, ep.anchors, ep.candidates)
        if ranked[0][0] in ep.answers:
            hits += 1
    return hits / len(episodes)


def uniform_pick_baseline(episodes: Sequence[RefineEpisode]) -> float:
    """Expected Hits@1 of picking uniformly from the candidate set."""
    if not episodes:
        raise ValueError("episodes must be nonempty")
    return float(
        np.mean(
            [
                len(ep.answers.intersection(ep.candidates)) / len(ep.candidates)
                for ep in episodes
            ]
        )
    )


def figure_path_counts(g: KnowledgeGraph, anchors: EntitySet, max_len: int):
    """Path-count compression rows; thin wrapper kept near the other
    figure-data producers."""
    return path_count_stats(g, anchors, max_len)
