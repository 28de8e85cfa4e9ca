"""Seeded verification suites pitting the fast paths against the oracles.

Each suite runs a batch of randomized instances and reports how many were
checked and which seeds reproduce any failure.  The CLI's verify command
and the acceptance tests both run these.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import epfo, oracles
from .coalesce import EntitySet, enumerate_reachable_sets, reach
from .scorer import UniformScorer
from .seeker import seek
from .synthbench import gen_random_graph


@dataclass
class SuiteResult:
    name: str
    checked: int
    failures: list[str] = field(default_factory=list)
    verb: str = "ok"

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = self.verb if self.ok else f"{len(self.failures)} FAILED"
        passed = self.checked - len(self.failures)
        return f"{self.name}: {passed}/{self.checked} {status}"


def _random_instance(rng: np.random.Generator, max_entities=200, max_edges=2000, max_relations=10):
    n = int(rng.integers(10, max_entities + 1))
    r = int(rng.integers(1, max_relations + 1))
    m = int(rng.integers(2 * n, min(max_edges, 10 * n) + 1))
    gseed = int(rng.integers(2**31))
    g = gen_random_graph(n, m, r, gseed)
    n_anchor = int(rng.integers(1, 4))
    anchors = EntitySet(rng.choice(n, size=n_anchor, replace=False))
    return g, anchors, gseed


def reach_oracle_suite(
    n_graphs: int = 200, seed: int = 0, max_len: int = 3, inject_fault: bool = False
) -> SuiteResult:
    """Reach over every sequence up to max_len must exactly equal
    brute-force path enumeration grouped by label sequence."""
    rng = np.random.default_rng(seed)
    result = SuiteResult(name="reach-oracle", checked=n_graphs)
    for i in range(n_graphs):
        g, anchors, gseed = _random_instance(rng)
        expected = oracles.label_path_reach(g, anchors, max_len)
        got = {
            seq: frozenset(map(int, es))
            for seq, es in enumerate_reachable_sets(g, anchors, max_len)
        }
        if inject_fault and i == 0:
            seq = next(iter(got))
            got[seq] = frozenset(set(got[seq]) ^ {0})
        if got != expected:
            result.failures.append(f"graph seed {gseed}: sequence/endpoint map mismatch")
            continue
        bad = [
            seq
            for seq in expected
            if frozenset(map(int, reach(g, anchors, seq))) != expected[seq]
        ]
        if bad:
            result.failures.append(f"graph seed {gseed}: reach mismatch on {bad[0]}")
    return result


def beam_exhaustive_suite(n_cases: int = 200, seed: int = 0) -> SuiteResult:
    """With a beam wide enough to never prune, seek's top-k must equal the
    exhaustive enumeration exactly (sequences identical, nll within 1e-9)."""
    rng = np.random.default_rng(seed)
    result = SuiteResult(name="beam-exhaustive", checked=n_cases)
    for i in range(n_cases):
        n = int(rng.integers(4, 25))
        r = int(rng.integers(1, 4))
        m = int(rng.integers(n, 4 * n))
        gseed = int(rng.integers(2**31))
        g = gen_random_graph(n, m, r, gseed)
        anchors = EntitySet(rng.choice(n, size=int(rng.integers(1, 3)), replace=False))
        max_steps = int(rng.integers(1, 4))
        beam_width = (r + 1) ** max_steps
        scorer = oracles.HashScorer(seed=gseed) if i % 3 else UniformScorer()
        top_k = int(rng.integers(1, beam_width + 1))
        got = seek(
            g,
            anchors,
            scorer,
            beam_width=beam_width,
            max_steps=max_steps,
            top_k=top_k,
        )
        want = oracles.exhaustive_seek(
            g, anchors, scorer, max_steps=max_steps, top_k=top_k
        )
        got_pairs = [(e.seq, e.nll) for e in got.entries]
        if [s for s, _ in got_pairs] != [s for s, _ in want]:
            result.failures.append(f"graph seed {gseed}: sequence set mismatch")
            continue
        if any(abs(a - b) > 1e-9 for (_, a), (_, b) in zip(got_pairs, want)):
            result.failures.append(f"graph seed {gseed}: nll mismatch")
    return result


def prop1_suite(n_pairs: int = 1000, seed: int = 0) -> SuiteResult:
    """Every valid DNF query's denotation must be contained in the union of
    reach over its cover sequences, with at most n_or + 1 sequences."""
    rng = np.random.default_rng(seed)
    result = SuiteResult(name="prop1", checked=n_pairs, verb="contained")
    for _ in range(n_pairs):
        n = int(rng.integers(8, 60))
        r = int(rng.integers(1, 7))
        m = int(rng.integers(2 * n, 6 * n))
        gseed = int(rng.integers(2**31))
        qseed = int(rng.integers(2**31))
        g = gen_random_graph(n, m, r, gseed)
        if g.num_edges == 0:
            continue
        q = epfo.random_query(g, max_conjuncts=3, max_atoms=4, rng_seed=qseed)
        report = epfo.validate(q)
        if not report.ok:
            result.failures.append(
                f"graph seed {gseed}, query seed {qseed}: generator produced invalid query"
            )
            continue
        answers = epfo.evaluate(g, q)
        covers = epfo.cover_sequences(q)
        if len(covers) > q.n_or + 1:
            result.failures.append(
                f"graph seed {gseed}, query seed {qseed}: {len(covers)} sequences > n_or+1"
            )
            continue
        anchors = EntitySet(sorted(set(q.anchors.values())))
        union = EntitySet.empty()
        for seqx in covers:
            union = union.union(reach(g, anchors, seqx))
        if not answers.issubset(union):
            result.failures.append(
                f"graph seed {gseed}, query seed {qseed}: denotation not covered"
            )
    return result


def run_all(
    reach_graphs: int = 200,
    beam_cases: int = 200,
    prop1_pairs: int = 1000,
    seed: int = 0,
    inject_fault: bool = False,
) -> list[SuiteResult]:
    return [
        reach_oracle_suite(reach_graphs, seed=seed, inject_fault=inject_fault),
        beam_exhaustive_suite(beam_cases, seed=seed + 1),
        prop1_suite(prop1_pairs, seed=seed + 2),
    ]
