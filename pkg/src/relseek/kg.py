"""In-memory knowledge graph with interned ids and array-indexed adjacency.

Entities and relations are interned to dense integer ids in first-seen
order.  Edges are stored as three parallel int64 arrays sorted by
(subject, relation, object), so per-(subject, relation) adjacency is a
binary-searched slice rather than a hash lookup.  Relation id 0 is the
reserved "self" relation; it is registered in every graph and never
carries edges.
"""

from __future__ import annotations

from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

SELF_RELATION = "self"
SELF_ID = 0
INVERSE_SUFFIX = "^-1"
COMMENT_PREFIX = "#"


class TripleParseError(ValueError):
    """Raised when a triple file line cannot be parsed."""


class TripleRecord(NamedTuple):
    subject: str
    relation: str
    object: str


class KnowledgeGraph:
    """Immutable directed multigraph with relation-typed edges.

    Construction is single-threaded; after it, all accessors are read-only
    and safe for unlimited concurrent readers.
    """

    def __init__(
        self,
        entity_names: Sequence[str],
        relation_names: Sequence[str],
        src: Iterable[int],
        rel: Iterable[int],
        dst: Iterable[int],
        *,
        orig_entity_ids: np.ndarray | None = None,
    ):
        self._entity_names = tuple(entity_names)
        self._relation_names = tuple(relation_names)
        if not self._relation_names or self._relation_names[0] != SELF_RELATION:
            raise ValueError("relation table must start with the reserved 'self' relation")
        if len(set(self._entity_names)) != len(self._entity_names):
            raise ValueError("duplicate entity names")
        if len(set(self._relation_names)) != len(self._relation_names):
            raise ValueError("duplicate relation names")
        self._entity_ids = {n: i for i, n in enumerate(self._entity_names)}
        self._relation_ids = {n: i for i, n in enumerate(self._relation_names)}

        src = np.asarray(src, dtype=np.int64).ravel()
        rel = np.asarray(rel, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if not (src.size == rel.size == dst.size):
            raise ValueError("edge arrays must have equal length")
        n, r1 = len(self._entity_names), len(self._relation_names)
        if src.size:
            if src.min() < 0 or src.max() >= n or dst.min() < 0 or dst.max() >= n:
                raise ValueError("edge endpoint id out of range")
            if rel.min() < 0 or rel.max() >= r1:
                raise ValueError("edge relation id out of range")
            if (rel == SELF_ID).any():
                raise ValueError("the self relation must not carry edges")
            order = np.lexsort((dst, rel, src))
            src, rel, dst = src[order], rel[order], dst[order]
            keep = np.ones(src.size, dtype=bool)
            keep[1:] = (
                (src[1:] != src[:-1]) | (rel[1:] != rel[:-1]) | (dst[1:] != dst[:-1])
            )
            src, rel, dst = src[keep], rel[keep], dst[keep]
        self._src, self._rel, self._dst = src, rel, dst
        self._skey = src * np.int64(r1) + rel
        for arr in (self._src, self._rel, self._dst, self._skey):
            arr.setflags(write=False)

        if orig_entity_ids is not None:
            orig_entity_ids = np.asarray(orig_entity_ids, dtype=np.int64)
            if orig_entity_ids.size != n:
                raise ValueError("orig_entity_ids length mismatch")
            if orig_entity_ids.size > 1 and (np.diff(orig_entity_ids) <= 0).any():
                raise ValueError("orig_entity_ids must be strictly increasing")
            orig_entity_ids.setflags(write=False)
        self._orig_entity_ids = orig_entity_ids

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[TripleRecord | tuple[str, str, str]],
        add_inverses: bool = False,
    ) -> "KnowledgeGraph":
        """Intern and index an iterable of (subject, relation, object) names.

        Duplicate triples are deduplicated.  With add_inverses, every
        relation r also gets a partner named r + "^-1" and each edge is
        mirrored through it.
        """
        ent_ids: dict[str, int] = {}
        ent_names: list[str] = []
        rel_ids: dict[str, int] = {SELF_RELATION: SELF_ID}
        rel_names: list[str] = [SELF_RELATION]
        src: list[int] = []
        rel: list[int] = []
        dst: list[int] = []

        def ent(name: str) -> int:
            got = ent_ids.get(name)
            if got is None:
                got = len(ent_names)
                ent_ids[name] = got
                ent_names.append(name)
            return got

        def relation(name: str) -> int:
            if name == SELF_RELATION:
                raise ValueError(f"relation name {SELF_RELATION!r} is reserved")
            got = rel_ids.get(name)
            if got is None:
                got = len(rel_names)
                rel_ids[name] = got
                rel_names.append(name)
                if add_inverses:
                    inv = name + INVERSE_SUFFIX
                    if inv not in rel_ids:
                        rel_ids[inv] = len(rel_names)
                        rel_names.append(inv)
            return got

        for t in triples:
            s, r, o = t
            if not s or not r or not o:
                raise ValueError(f"empty field in triple {t!r}")
            si, ri, oi = ent(s), relation(r), ent(o)
            src.append(si)
            rel.append(ri)
            dst.append(oi)
            if add_inverses:
                src.append(oi)
                rel.append(rel_ids[r + INVERSE_SUFFIX])
                dst.append(si)
        return cls(ent_names, rel_names, src, rel, dst)

    # ------------------------------------------------------------------
    # interning
    # ------------------------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self._entity_names)

    @property
    def num_relations(self) -> int:
        """Size of the relation table, including the reserved self relation."""
        return len(self._relation_names)

    @property
    def num_edges(self) -> int:
        return int(self._src.size)

    @property
    def orig_entity_ids(self) -> np.ndarray | None:
        """For induced subgraphs, the parent-graph id of each local entity."""
        return self._orig_entity_ids

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise KeyError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise KeyError(f"unknown relation {name!r}") from None

    def entity_name(self, i: int) -> str:
        self._check_entity(i)
        return self._entity_names[i]

    def relation_name(self, i: int) -> str:
        self._check_relation(i)
        return self._relation_names[i]

    def has_entity(self, name: str) -> bool:
        return name in self._entity_ids

    def has_relation(self, name: str) -> bool:
        return name in self._relation_ids

    def entity_names(self) -> tuple[str, ...]:
        return self._entity_names

    def relation_names(self) -> tuple[str, ...]:
        return self._relation_names

    def _check_entity(self, v: int) -> None:
        if not 0 <= v < self.num_entities:
            raise KeyError(f"entity id {v} out of range")

    def _check_relation(self, r: int) -> None:
        if not 0 <= r < self.num_relations:
            raise KeyError(f"relation id {r} out of range")

    def _check_entity_array(self, vs: np.ndarray) -> None:
        if vs.size and (vs.min() < 0 or vs.max() >= self.num_entities):
            raise KeyError("entity id out of range")

    # ------------------------------------------------------------------
    # adjacency
    # ------------------------------------------------------------------

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Read-only (src, rel, dst) arrays sorted by (src, rel, dst)."""
        return self._src, self._rel, self._dst

    def out_neighbors(self, v: int, r: int) -> np.ndarray:
        """Sorted, duplicate-free objects o with an edge (v, r, o)."""
        self._check_entity(v)
        self._check_relation(r)
        if r == SELF_ID:
            raise ValueError("the self relation has no stored edges")
        key = np.int64(v) * self.num_relations + r
        lo = int(np.searchsorted(self._skey, key, side="left"))
        hi = int(np.searchsorted(self._skey, key, side="right"))
        return self._dst[lo:hi]

    def has_edge(self, s: int, r: int, o: int) -> bool:
        nbrs = self.out_neighbors(s, r)
        pos = int(np.searchsorted(nbrs, o))
        return pos < nbrs.size and int(nbrs[pos]) == o

    def batch_out_neighbors(self, vs: np.ndarray, r: int) -> np.ndarray:
        """Objects reachable from any of vs via r, concatenated (with duplicates)."""
        self._check_relation(r)
        if r == SELF_ID:
            raise ValueError("the self relation has no stored edges")
        vs = np.asarray(vs, dtype=np.int64)
        self._check_entity_array(vs)
        keys = vs * np.int64(self.num_relations) + r
        return self._gather_slices(self._skey, keys, self._dst)

    def all_out_neighbors(self, vs: np.ndarray) -> np.ndarray:
        """Objects reachable from any of vs via any relation (with duplicates)."""
        vs = np.asarray(vs, dtype=np.int64)
        self._check_entity_array(vs)
        return self._gather_slices(self._src, vs, self._dst)

    def outgoing_relations_of(self, v: int) -> np.ndarray:
        """Sorted relation ids with at least one outgoing edge from v."""
        self._check_entity(v)
        lo = int(np.searchsorted(self._src, v, side="left"))
        hi = int(np.searchsorted(self._src, v, side="right"))
        return np.unique(self._rel[lo:hi])

    def outgoing_relations(self, vs) -> np.ndarray:
        """Sorted relation ids with an outgoing edge from any member of vs.

        Never includes the self relation.  Accepts anything convertible to
        an id array (EntitySet included).
        """
        vs = np.asarray(vs, dtype=np.int64)
        self._check_entity_array(vs)
        rels = self._gather_slices(self._src, vs, self._rel)
        return np.unique(rels)

    @staticmethod
    def _gather_slices(sorted_keys: np.ndarray, wanted: np.ndarray, values: np.ndarray) -> np.ndarray:
        los = np.searchsorted(sorted_keys, wanted, side="left")
        his = np.searchsorted(sorted_keys, wanted, side="right")
        lens = his - los
        total = int(lens.sum())
        if total == 0:
            return np.zeros(0, dtype=values.dtype)
        nz = lens > 0
        los, lens = los[nz], lens[nz]
        offsets = np.repeat(np.cumsum(lens) - lens, lens)
        idx = np.repeat(los, lens) + np.arange(total, dtype=np.int64) - offsets
        return values[idx]

    # ------------------------------------------------------------------
    # subgraphs and serialization
    # ------------------------------------------------------------------

    def induced_subgraph(self, nodes) -> "KnowledgeGraph":
        """Subgraph over `nodes` with exactly the edges whose endpoints both lie in it.

        Entity ids are re-interned densely (ascending by old id) and the
        mapping back to this graph's ids is kept in orig_entity_ids.  The
        relation table is preserved unchanged so relation ids stay stable
        across extraction.
        """
        ids = np.unique(np.asarray(nodes, dtype=np.int64))
        self._check_entity_array(ids)
        keep = np.isin(self._src, ids) & np.isin(self._dst, ids)
        new_src = np.searchsorted(ids, self._src[keep])
        new_rel = self._rel[keep]
        new_dst = np.searchsorted(ids, self._dst[keep])
        names = [self._entity_names[int(i)] for i in ids]
        orig = ids if self._orig_entity_ids is None else self._orig_entity_ids[ids]
        return KnowledgeGraph(
            names, self._relation_names, new_src, new_rel, new_dst, orig_entity_ids=orig
        )

    def local_ids(self, orig_ids) -> np.ndarray:
        """Map parent-graph entity ids to this subgraph's local ids."""
        wanted = np.asarray(orig_ids, dtype=np.int64)
        if self._orig_entity_ids is None:
            self._check_entity_array(wanted)
            return wanted
        if wanted.size == 0:
            return wanted
        if self.num_entities == 0:
            raise KeyError(f"entity id {int(wanted[0])} not present in subgraph")
        pos = np.searchsorted(self._orig_entity_ids, wanted)
        ok = (pos < self.num_entities) & (self._orig_entity_ids[np.minimum(pos, self.num_entities - 1)] == wanted)
        if not np.all(ok):
            missing = wanted[~ok]
            raise KeyError(f"entity id {int(missing[0])} not present in subgraph")
        return pos

    def triples(self) -> Iterator[TripleRecord]:
        for s, r, o in zip(self._src, self._rel, self._dst):
            yield TripleRecord(
                self._entity_names[int(s)],
                self._relation_names[int(r)],
                self._entity_names[int(o)],
            )

    def to_triple_lines(self) -> Iterator[str]:
        for t in self.triples():
            yield f"{t.subject}\t{t.relation}\t{t.object}"

    def stats_line(self) -> str:
        return f"entities={self.num_entities} relations={self.num_relations} edges={self.num_edges}"

    def __repr__(self) -> str:
        return f"KnowledgeGraph({self.stats_line()})"


def parse_triple_lines(lines: Iterable[str], source: str = "<triples>") -> Iterator[TripleRecord]:
    """Parse tab-separated triple lines, skipping blanks and # comments."""
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        stripped = line.strip()
        if not stripped or stripped.startswith(COMMENT_PREFIX):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise TripleParseError(
                f"{source}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
            )
        s, r, o = (p.strip() for p in parts)
        if not s or not r or not o:
            raise TripleParseError(f"{source}:{lineno}: empty field in triple")
        yield TripleRecord(s, r, o)


def load_triples(path, add_inverses: bool = False) -> KnowledgeGraph:
    """Load a UTF-8 tab-separated triple file into a KnowledgeGraph."""
    with open(path, encoding="utf-8") as fh:
        return KnowledgeGraph.from_triples(
            parse_triple_lines(fh, source=str(path)), add_inverses=add_inverses
        )


def save_triples(g: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in g.to_triple_lines():
            fh.write(line + "\n")
