"""Reach semantics over relation sequences, computed frontier by frontier.

A frontier (EntitySet) is the set of entities reachable from the anchors by
one specific relation sequence.  Nothing is materialized globally: each
step unions per-member adjacency slices, switching to a dense boolean mask
when the candidate union grows past a threshold.
"""

from __future__ import annotations

from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .kg import SELF_ID, KnowledgeGraph

RelationSeq = tuple[int, ...]

DEFAULT_DENSE_THRESHOLD = 4096

_EMPTY_IDS = np.zeros(0, dtype=np.int64)
_EMPTY_IDS.setflags(write=False)


class EntitySet:
    """Sorted, duplicate-free set of entity ids with element-wise equality."""

    __slots__ = ("_ids",)

    def __init__(self, ids: Iterable[int] = ()):
        arr = np.asarray(ids if isinstance(ids, np.ndarray) else list(ids), dtype=np.int64)
        arr = np.unique(arr.ravel())
        arr.setflags(write=False)
        self._ids = arr

    @classmethod
    def _from_sorted(cls, arr: np.ndarray) -> "EntitySet":
        # trusted constructor: arr must already be sorted, unique int64
        out = object.__new__(cls)
        arr.setflags(write=False)
        out._ids = arr
        return out

    @classmethod
    def empty(cls) -> "EntitySet":
        return cls._from_sorted(_EMPTY_IDS)

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    def __array__(self, dtype=None, copy=None):
        if dtype is not None and dtype != self._ids.dtype:
            return self._ids.astype(dtype)
        return self._ids

    def __len__(self) -> int:
        return int(self._ids.size)

    def __bool__(self) -> bool:
        return self._ids.size > 0

    def __iter__(self):
        return (int(v) for v in self._ids)

    def __contains__(self, v) -> bool:
        pos = int(np.searchsorted(self._ids, v))
        return pos < self._ids.size and int(self._ids[pos]) == v

    def __eq__(self, other) -> bool:
        if not isinstance(other, EntitySet):
            return NotImplemented
        return bool(np.array_equal(self._ids, other._ids))

    def __hash__(self) -> int:
        return hash((self._ids.size, self._ids.tobytes()))

    def __repr__(self) -> str:
        shown = ", ".join(str(int(v)) for v in self._ids[:8])
        more = ", ..." if self._ids.size > 8 else ""
        return f"EntitySet([{shown}{more}])"

    def union(self, *others: "EntitySet") -> "EntitySet":
        arrays = [self._ids] + [o._ids for o in others]
        return EntitySet._from_sorted(np.unique(np.concatenate(arrays)))

    def intersection(self, other: "EntitySet") -> "EntitySet":
        return EntitySet._from_sorted(
            np.intersect1d(self._ids, other._ids, assume_unique=True)
        )

    def difference(self, other: "EntitySet") -> "EntitySet":
        return EntitySet._from_sorted(
            np.setdiff1d(self._ids, other._ids, assume_unique=True)
        )

    def issubset(self, other: "EntitySet") -> bool:
        if self._ids.size == 0:
            return True
        if other._ids.size == 0:
            return False
        pos = np.searchsorted(other._ids, self._ids)
        pos = np.minimum(pos, other._ids.size - 1)
        return bool(np.all(other._ids[pos] == self._ids))


def check_relation_seq(seq: Sequence[int]) -> RelationSeq:
    """Validate a relation sequence: leading self, no interior self."""
    seq = tuple(int(r) for r in seq)
    if not seq or seq[0] != SELF_ID:
        raise ValueError("relation sequence must start with the self relation")
    if any(r == SELF_ID for r in seq[1:-1]):
        raise ValueError("self may only appear leading or as the terminal marker")
    return seq


def reach_step(
    g: KnowledgeGraph,
    frontier: EntitySet,
    rel: int,
    *,
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
) -> EntitySet:
    """One relation-following step: union of out-neighbors over the frontier.

    The self relation is an identity step.  Below `dense_threshold`
    candidate neighbors the union is a sort of the concatenated slices;
    above it, a dense boolean mask over all entities.
    """
    rel = int(rel)
    if rel == SELF_ID:
        g._check_relation(rel)
        return frontier
    if len(frontier) == 0:
        g._check_relation(rel)
        return EntitySet.empty()
    dup = g.batch_out_neighbors(frontier.ids, rel)
    if dup.size == 0:
        return EntitySet.empty()
    if dup.size <= dense_threshold:
        return EntitySet._from_sorted(np.unique(dup))
    mask = np.zeros(g.num_entities, dtype=bool)
    mask[dup] = True
    return EntitySet._from_sorted(np.flatnonzero(mask).astype(np.int64))


def reach(
    g: KnowledgeGraph,
    anchors: EntitySet,
    seq: Sequence[int],
    *,
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
) -> EntitySet:
    """Entities reachable from the anchors by following `seq` left to right.

    Returns the empty set as soon as any intermediate frontier is empty.
    """
    seq = check_relation_seq(seq)
    if len(anchors) == 0:
        raise ValueError("anchors must be nonempty")
    frontier = anchors
    for r in seq[1:]:
        if r == SELF_ID:
            continue
        frontier = reach_step(g, frontier, r, dense_threshold=dense_threshold)
        if not frontier:
            return frontier
    return frontier


def _levels(
    g: KnowledgeGraph,
    anchors: EntitySet,
    max_len: int,
    dense_threshold: int,
) -> Iterator[list[tuple[RelationSeq, EntitySet]]]:
    """Yield, per length 0..max_len, all (sequence, frontier) pairs with
    nonempty frontiers, in (parent order, relation id) order."""
    level: list[tuple[RelationSeq, EntitySet]] = [((SELF_ID,), anchors)]
    yield level
    for _ in range(max_len):
        nxt: list[tuple[RelationSeq, EntitySet]] = []
        for seq, frontier in level:
            for r in g.outgoing_relations(frontier):
                r = int(r)
                nxt.append(
                    (seq + (r,), reach_step(g, frontier, r, dense_threshold=dense_threshold))
                )
        level = nxt
        yield level
        if not level:
            break


def enumerate_reachable_sets(
    g: KnowledgeGraph,
    anchors: EntitySet,
    max_len: int,
    *,
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
) -> list[tuple[RelationSeq, EntitySet]]:
    """All relation sequences of length <= max_len with nonempty reach.

    Breadth-first and deterministic: ordered by length, then
    lexicographically by relation ids.  Distinct sequences reaching the
    same set are kept separate.  Grows as O(|R|^max_len); keep max_len
    small.
    """
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    if len(anchors) == 0:
        raise ValueError("anchors must be nonempty")
    out: list[tuple[RelationSeq, EntitySet]] = []
    for level in _levels(g, anchors, max_len, dense_threshold):
        out.extend(level)
    return out


class PathCount(NamedTuple):
    length: int
    original_paths: int
    coalesced_paths: int


def path_count_stats(
    g: KnowledgeGraph,
    anchors: EntitySet,
    max_len: int,
    *,
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
) -> list[PathCount]:
    """Per length L, the number of distinct node-level paths from the
    anchors versus the number of distinct relation sequences with nonempty
    reach.  The coalesced count never exceeds the original count."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if len(anchors) == 0:
        raise ValueError("anchors must be nonempty")
    src, _, dst = g.edge_arrays()
    counts = np.zeros(g.num_entities, dtype=np.int64)
    counts[anchors.ids] = 1
    original: list[int] = []
    for _ in range(max_len):
        nxt = np.zeros(g.num_entities, dtype=np.int64)
        np.add.at(nxt, dst, counts[src])
        original.append(int(nxt.sum()))
        counts = nxt

    coalesced = [0] * max_len
    level_iter = _levels(g, anchors, max_len, dense_threshold)
    next(level_iter)  # length-0 base case not counted
    for depth, level in enumerate(level_iter):
        coalesced[depth] = len(level)
    return [
        PathCount(length=i + 1, original_paths=original[i], coalesced_paths=coalesced[i])
        for i in range(max_len)
    ]


def path_count_csv_rows(stats: Iterable[PathCount]) -> Iterator[str]:
    """Rows "length,original_paths,coalesced_paths" for plotting."""
    for row in stats:
        yield f"{row.length},{row.original_paths},{row.coalesced_paths}"
